//! Hard-instance generators: moment-matched distribution pairs on
//! {0} ∪ [1, Λ], Poissonized signal/noise datasets built from them, random
//! "good" subsets with their exact verifier, parity-slice mixtures over the
//! Boolean cube, and the Fourier utilities the divergence checkers consume.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distlib::{sample_poisson, Kahan};
use crate::error::{Error, Result};
use crate::lp::{rat_from_f64, rat_int, rat_to_f64, Outcome, Program, Rat, Relation};

use crate::shuffle_core::Dataset;

// ---------------------------------------------------------------------------
// Moment-matched pairs
// ---------------------------------------------------------------------------

/// A pair of distributions U, V on the grid {0} ∪ [1, Λ] with equal means 1,
/// equal moments up to order `l_order`, and maximal mass gap at zero.
/// `gap` = U(0) - V(0): datasets weighted by U have ≈ gap·D fewer occupied
/// coordinates than V-weighted ones, while low moments (hence low-order
/// transcript statistics) agree.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentPair {
    pub support: Vec<f64>,
    pub u_masses: Vec<f64>,
    pub v_masses: Vec<f64>,
    #[serde(rename = "L")]
    pub l_order: u32,
    #[serde(rename = "Lambda")]
    pub lambda: f64,
    pub gap: f64,
}

impl MomentPair {
    /// Moment deviations |E[U^j] - E[V^j]|, measured relative to Λ^j (the
    /// scale at which the optimizer pins them; the raw j-th moments grow like
    /// Λ^j, where an absolute tolerance would be meaningless).
    pub fn scaled_moment_gaps(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for j in 1..=self.l_order {
            let mut du = Kahan::new();
            let mut dv = Kahan::new();
            for (k, &x) in self.support.iter().enumerate() {
                let xj = (x / self.lambda).powi(j as i32);
                du.add(self.u_masses[k] * xj);
                dv.add(self.v_masses[k] * xj);
            }
            out.push((du.value() - dv.value()).abs());
        }
        out
    }

    pub fn mean(&self, side: Side) -> f64 {
        let masses = match side {
            Side::U => &self.u_masses,
            Side::V => &self.v_masses,
        };
        let mut s = Kahan::new();
        for (k, &x) in self.support.iter().enumerate() {
            s.add(masses[k] * x);
        }
        s.value()
    }

    /// E[e^{-X}] for the chosen side: one minus this is the per-coordinate
    /// occupancy probability of the Poissonized signal part.
    pub fn mean_exp_neg(&self, side: Side) -> f64 {
        let masses = match side {
            Side::U => &self.u_masses,
            Side::V => &self.v_masses,
        };
        let mut s = Kahan::new();
        for (k, &x) in self.support.iter().enumerate() {
            s.add(masses[k] * (-x).exp());
        }
        s.value()
    }

    pub fn verify(&self, tol: f64) -> Result<()> {
        for side in [Side::U, Side::V] {
            let masses = match side {
                Side::U => &self.u_masses,
                Side::V => &self.v_masses,
            };
            let total: f64 = masses.iter().sum();
            if (total - 1.0).abs() > tol || masses.iter().any(|&m| m < -tol) {
                return Err(Error::Invariant(format!(
                    "{side:?} masses not a distribution (sum {total})"
                )));
            }
            if (self.mean(side) - 1.0).abs() > tol {
                return Err(Error::Invariant(format!(
                    "{side:?} mean {} ≠ 1",
                    self.mean(side)
                )));
            }
        }
        if let Some(worst) = self
            .scaled_moment_gaps()
            .into_iter()
            .fold(None::<f64>, |a, g| Some(a.map_or(g, |m| m.max(g))))
        {
            if worst > tol {
                return Err(Error::Invariant(format!(
                    "scaled moment gap {worst} exceeds {tol}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    U,
    V,
}

/// Maximizes U(0) - V(0) over pairs of distributions on the grid
/// {0} ∪ {1, 1+step, …, Λ} subject to E[U] = E[V] = 1 and matched moments
/// E[U^j] = E[V^j] for j ≤ L. Solved exactly over the rationals; moment rows
/// are scaled by Λ^{-j} so every coefficient lies in [0, 1].
pub fn match_moments(l: u32, lambda: f64, grid_step: f64) -> Result<MomentPair> {
    if l < 1 {
        return Err(Error::Parameter("L must be ≥ 1".into()));
    }
    if !(lambda >= 1.0) {
        return Err(Error::Parameter(format!("Lambda {lambda} must be ≥ 1")));
    }
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(Error::Parameter(format!(
            "grid_step {grid_step} outside (0, 0.5]"
        )));
    }
    let lam = rat_from_f64(lambda);
    let step = rat_from_f64(grid_step);
    let mut grid: Vec<Rat> = vec![rat_int(0)];
    let mut x = rat_int(1);
    while x < lam {
        grid.push(x.clone());
        x += step.clone();
    }
    grid.push(lam.clone());
    let g = grid.len();
    // Scaled powers (x/Λ)^j for each grid point.
    let scaled: Vec<Rat> = grid.iter().map(|x| x / &lam).collect();

    let num_vars = 2 * g;
    // Objective: minimize V(0) - U(0), i.e. maximize the gap at zero.
    let mut objective = vec![rat_int(0); num_vars];
    objective[0] = rat_int(-1);
    objective[g] = rat_int(1);
    let mut prog = Program::new(num_vars, objective);

    // Normalization rows.
    let mut norm_u = vec![rat_int(0); num_vars];
    let mut norm_v = vec![rat_int(0); num_vars];
    for k in 0..g {
        norm_u[k] = rat_int(1);
        norm_v[g + k] = rat_int(1);
    }
    prog.constrain(norm_u, Relation::Eq, rat_int(1));
    prog.constrain(norm_v, Relation::Eq, rat_int(1));
    // Mean rows, scaled: Σ (x/Λ)·mass = 1/Λ.
    let mut mean_u = vec![rat_int(0); num_vars];
    let mut mean_v = vec![rat_int(0); num_vars];
    for k in 0..g {
        mean_u[k] = scaled[k].clone();
        mean_v[g + k] = scaled[k].clone();
    }
    prog.constrain(mean_u, Relation::Eq, rat_int(1) / &lam);
    prog.constrain(mean_v, Relation::Eq, rat_int(1) / &lam);
    // Matched higher moments: Σ (x/Λ)^j (u_k - v_k) = 0 for 2 ≤ j ≤ L.
    let mut powers: Vec<Rat> = scaled.clone();
    for _ in 2..=l {
        for k in 0..g {
            powers[k] = &powers[k] * &scaled[k];
        }
        let mut row = vec![rat_int(0); num_vars];
        for k in 0..g {
            row[k] = powers[k].clone();
            row[g + k] = -powers[k].clone();
        }
        prog.constrain(row, Relation::Eq, rat_int(0));
    }

    match crate::lp::solve(&prog)? {
        Outcome::Optimal { x, objective } => {
            let support: Vec<f64> = grid.iter().map(rat_to_f64).collect();
            let u_masses: Vec<f64> = x[..g].iter().map(rat_to_f64).collect();
            let v_masses: Vec<f64> = x[g..].iter().map(rat_to_f64).collect();
            let pair = MomentPair {
                support,
                u_masses,
                v_masses,
                l_order: l,
                lambda,
                gap: -rat_to_f64(&objective),
            };
            pair.verify(1e-9)?;
            Ok(pair)
        }
        Outcome::Infeasible { residual } => Err(Error::Infeasible(format!(
            "moment constraints infeasible, phase-1 residual {}",
            rat_to_f64(&residual)
        ))),
        Outcome::Unbounded => Err(Error::Invariant(
            "bounded-by-1 objective reported unbounded".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Poissonized datasets
// ---------------------------------------------------------------------------

/// Dataset distribution: per coordinate i ∈ [D], draw λ_i from the chosen
/// side of the pair and add Poi(λ_i) users holding i (signal); per j ∈ E add
/// Poi(n/|E|) users holding j (planted noise floor).
#[derive(Clone, Debug)]
pub struct PoissonizedSpec {
    pub d: u64,
    pub n: f64,
    pub pair: MomentPair,
    pub side: Side,
    pub e: Vec<u64>,
}

pub fn sample_weight<R: Rng + ?Sized>(pair: &MomentPair, side: Side, rng: &mut R) -> f64 {
    let masses = match side {
        Side::U => &pair.u_masses,
        Side::V => &pair.v_masses,
    };
    let mut u = rng.gen::<f64>();
    for (k, &m) in masses.iter().enumerate() {
        if u < m {
            return pair.support[k];
        }
        u -= m;
    }
    *pair.support.last().unwrap()
}

/// Signal part only: Poi(λ_i) holders of each coordinate.
pub fn sample_signal_part<R: Rng + ?Sized>(
    d: u64,
    pair: &MomentPair,
    side: Side,
    rng: &mut R,
) -> Vec<u64> {
    let mut entries = Vec::new();
    for i in 1..=d {
        let lam = sample_weight(pair, side, rng);
        for _ in 0..sample_poisson(lam, rng) {
            entries.push(i);
        }
    }
    entries
}

pub fn sample_poissonized<R: Rng + ?Sized>(spec: &PoissonizedSpec, rng: &mut R) -> Result<Dataset> {
    if spec.e.is_empty() {
        return Err(Error::Parameter("noise subset E must be nonempty".into()));
    }
    if spec.e.iter().any(|&j| j == 0 || j > spec.d) {
        return Err(Error::Parameter("noise subset E not within [1, D]".into()));
    }
    let mut entries = sample_signal_part(spec.d, &spec.pair, spec.side, rng);
    let rate = spec.n / spec.e.len() as f64;
    for &j in &spec.e {
        for _ in 0..sample_poisson(rate, rng) {
            entries.push(j);
        }
    }
    Dataset::new(spec.d, entries)
}

/// Deletes uniformly random users until at most `target_n` remain; datasets
/// at or under the target pass through unchanged.
pub fn trim_dataset<R: Rng + ?Sized>(dataset: &Dataset, target_n: usize, rng: &mut R) -> Dataset {
    if dataset.n() <= target_n {
        return dataset.clone();
    }
    // Partial Fisher–Yates: the first target_n slots end up a uniform sample.
    let mut idx: Vec<usize> = (0..dataset.n()).collect();
    for i in 0..target_n {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    let mut keep = idx[..target_n].to_vec();
    keep.sort_unstable();
    let entries = keep.into_iter().map(|i| dataset.entries[i]).collect();
    Dataset::new(dataset.universe_size, entries).expect("subset of valid entries stays valid")
}

// ---------------------------------------------------------------------------
// Good subsets
// ---------------------------------------------------------------------------

/// Includes each element of [1, D] independently with probability `epsilon1`.
pub fn sample_good_subset<R: Rng + ?Sized>(d: u64, epsilon1: f64, rng: &mut R) -> Result<Vec<u64>> {
    if !(epsilon1 > 0.0 && epsilon1 < 0.5) {
        return Err(Error::Parameter(format!(
            "epsilon1 {epsilon1} outside (0, 0.5)"
        )));
    }
    Ok((1..=d).filter(|_| rng.gen::<f64>() < epsilon1).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct GoodSubsetCheck {
    pub good: bool,
    pub size_ok: bool,
    pub mass_ok: bool,
    pub reason: String,
}

/// Exact goodness verifier for a subset E against a concrete randomizer
/// matrix (row i-1 = distribution of R(i) over the message alphabet):
///   1. 0 < |E| < 2·ε₁·D;
///   2. for every input i, Pr_{z←R(i)}[ν^E_z ≥ 2Λ²·μ_z] ≥ 1 - 1/(2Λ),
/// where ν^E = (n/|E|)·Σ_{i∈E} R(i) and μ = Σ_{i∈[D]} R(i).
pub fn verify_good_subset(
    e: &[u64],
    rows: &[Vec<f64>],
    lambda: f64,
    n: f64,
    epsilon1: f64,
) -> GoodSubsetCheck {
    let d = rows.len();
    if e.is_empty() {
        return GoodSubsetCheck {
            good: false,
            size_ok: false,
            mass_ok: false,
            reason: "E is empty".into(),
        };
    }
    if e.iter().any(|&j| j == 0 || j as usize > d) {
        return GoodSubsetCheck {
            good: false,
            size_ok: false,
            mass_ok: false,
            reason: "E contains inputs outside [1, D]".into(),
        };
    }
    let m = rows[0].len();
    let size_ok = (e.len() as f64) < 2.0 * epsilon1 * d as f64;
    let mut nu = vec![0.0f64; m];
    for &j in e {
        for (z, &p) in rows[j as usize - 1].iter().enumerate() {
            nu[z] += p * n / e.len() as f64;
        }
    }
    let mut mu = vec![0.0f64; m];
    for row in rows {
        for (z, &p) in row.iter().enumerate() {
            mu[z] += p;
        }
    }
    let heavy: Vec<bool> = (0..m)
        .map(|z| nu[z] >= 2.0 * lambda * lambda * mu[z])
        .collect();
    let threshold = 1.0 - 1.0 / (2.0 * lambda);
    let mut worst = f64::INFINITY;
    for row in rows {
        let mass: f64 = row
            .iter()
            .zip(&heavy)
            .filter(|(_, &h)| h)
            .map(|(&p, _)| p)
            .sum();
        worst = worst.min(mass);
    }
    let mass_ok = worst >= threshold;
    GoodSubsetCheck {
        good: size_ok && mass_ok,
        size_ok,
        mass_ok,
        reason: format!(
            "|E|={} vs 2ε₁D={}, min heavy mass {worst:.6} vs threshold {threshold:.6}",
            e.len(),
            2.0 * epsilon1 * d as f64
        ),
    }
}

// ---------------------------------------------------------------------------
// Parity mixtures over the Boolean cube
// ---------------------------------------------------------------------------

/// Mixture over {0,1}^D: with probability α a uniform point of the slice
/// {x : ⟨x,s⟩ = ℓ (mod 2)}, otherwise a uniform point of the whole cube.
/// Cube points are encoded little-endian (bit j of the integer is
/// coordinate j+1) and shifted by one so dataset value 0 keeps meaning
/// "holds nothing".
#[derive(Clone, Copy, Debug)]
pub struct ParityMixtureSpec {
    pub d: u32,
    pub ell: u8,
    pub s: u64,
    pub alpha: f64,
}

impl ParityMixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > 63 {
            return Err(Error::Parameter(format!("dimension {} outside [1, 63]", self.d)));
        }
        if self.s == 0 || (self.d < 64 && self.s >> self.d != 0) {
            return Err(Error::Parameter(format!(
                "direction s={:#b} must be a nonzero {}-bit mask",
                self.s, self.d
            )));
        }
        if self.ell > 1 {
            return Err(Error::Parameter("parity bit must be 0 or 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Parameter(format!("alpha {} outside [0,1]", self.alpha)));
        }
        Ok(())
    }
}

fn parity(x: u64, s: u64) -> u8 {
    ((x & s).count_ones() % 2) as u8
}

/// One draw from the mixture, as a cube point in [0, 2^D).
pub fn sample_parity_point<R: Rng + ?Sized>(spec: &ParityMixtureSpec, rng: &mut R) -> u64 {
    let size = 1u64 << spec.d;
    let mut x = rng.gen_range(0..size);
    if rng.gen::<f64>() < spec.alpha && parity(x, spec.s) != spec.ell {
        // Flipping a fixed coordinate of s is a parity-swapping bijection,
        // so the conditional law stays uniform on the slice.
        x ^= spec.s & spec.s.wrapping_neg();
    }
    x
}

pub fn sample_parity_mixture<R: Rng + ?Sized>(
    spec: &ParityMixtureSpec,
    n: u64,
    rng: &mut R,
) -> Result<Dataset> {
    spec.validate()?;
    let entries: Vec<u64> = (0..n).map(|_| sample_parity_point(spec, rng) + 1).collect();
    Dataset::new(1u64 << spec.d, entries)
}

/// (1 - e^{-1}·cosh α)·n: the concentration center of the distinct count of
/// n mixture draws over a cube of the same cardinality n.
pub fn expected_distinct(alpha: f64, n: u64) -> f64 {
    (1.0 - (-1.0f64).exp() * alpha.cosh()) * n as f64
}

/// Exhaustive pmf of the mixture over cube points [0, 2^D), for D ≤ 20.
pub fn parity_mixture_pmf(spec: &ParityMixtureSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.d > 20 {
        return Err(Error::Scale(format!(
            "exhaustive pmf needs D ≤ 20, got {}",
            spec.d
        )));
    }
    let size = 1usize << spec.d;
    let uniform = 1.0 / size as f64;
    let slice = 2.0 / size as f64;
    Ok((0..size as u64)
        .map(|x| {
            let on = parity(x, spec.s) == spec.ell;
            (1.0 - spec.alpha) * uniform + if on { spec.alpha * slice } else { 0.0 }
        })
        .collect())
}

/// Draws the random direction/parity pair of the planted family: s uniform
/// over nonzero masks, ℓ a fair bit; α = 0 recovers the uniform family.
pub fn sample_planted_direction<R: Rng + ?Sized>(d: u32, rng: &mut R) -> (u64, u8) {
    let s = rng.gen_range(1..(1u64 << d));
    (s, rng.gen_range(0..2u8) as u8)
}

// ---------------------------------------------------------------------------
// Boolean Fourier utilities
// ---------------------------------------------------------------------------

/// All Fourier coefficients f̂(s) = E_x[f(x)·(-1)^{⟨x,s⟩}] via the
/// Walsh–Hadamard butterfly; input length must be a power of two ≤ 2^20.
pub fn fourier_transform(f: &[f64]) -> Result<Vec<f64>> {
    let n = f.len();
    if !n.is_power_of_two() || n > 1 << 20 {
        return Err(Error::Scale(format!(
            "table length {n} not a power of two ≤ 2^20"
        )));
    }
    let mut a = f.to_vec();
    let mut h = 1;
    while h < n {
        for block in a.chunks_mut(2 * h) {
            for i in 0..h {
                let (x, y) = (block[i], block[i + h]);
                block[i] = x + y;
                block[i + h] = x - y;
            }
        }
        h *= 2;
    }
    let scale = 1.0 / n as f64;
    for v in &mut a {
        *v *= scale;
    }
    Ok(a)
}

/// Single coefficient by direct summation (independent of the butterfly).
pub fn fourier_coefficient(f: &[f64], s: u64) -> f64 {
    let mut acc = Kahan::new();
    for (x, &v) in f.iter().enumerate() {
        if (x as u64 & s).count_ones() % 2 == 0 {
            acc.add(v);
        } else {
            acc.add(-v);
        }
    }
    acc.value() / f.len() as f64
}

/// Level-1 Fourier weight Σ_j f̂({j})².
pub fn level1_weight(f: &[f64]) -> Result<f64> {
    let coeffs = fourier_transform(f)?;
    let d = f.len().trailing_zeros();
    let mut w = 0.0;
    for j in 0..d {
        w += coeffs[1usize << j].powi(2);
    }
    Ok(w)
}
