//! Windowed distributions over the integers with explicit truncation
//! accounting.
//!
//! Every distribution is materialized as a contiguous window of point masses
//! plus a `tail_mass` upper bound on everything outside the window. The tail
//! is carried through convolution and mixtures and reported alongside every
//! divergence, so a bound certified by these routines is sound: truncation can
//! only be charged *against* the certifier, never silently in its favor.
//!
//! All logarithms are natural.

use rand::Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};

/// Default per-constituent truncation budget.
pub const DEFAULT_TRUNC_BUDGET: f64 = 1e-15;

/// Masses more negative than this indicate a real arithmetic bug rather than
/// benign floating-point cancellation.
const NEG_MASS_TOL: f64 = 1e-15;

/// Normalization slack permitted on `sum(masses) + tail_mass`.
const NORM_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Compensated accumulation
// ---------------------------------------------------------------------------

/// Neumaier-compensated accumulator. Divergence targets live near 1e-6..1e-12
/// while windows run to ~1e7 entries, so naive summation would lose exactly
/// the digits being certified.
#[derive(Clone, Copy, Debug, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of a slice.
pub fn ksum(xs: &[f64]) -> f64 {
    let mut acc = Kahan::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

// ---------------------------------------------------------------------------
// ln-gamma (Lanczos) — used only to seed recurrences at a distribution's mode
// ---------------------------------------------------------------------------

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for z > 0, accurate to ~1e-13 relative.
pub fn ln_gamma(z: f64) -> f64 {
    assert!(z > 0.0, "ln_gamma requires z > 0, got {z}");
    if z < 0.5 {
        // Lift small arguments through Gamma(z) = Gamma(z+1)/z.
        return ln_gamma(z + 1.0) - z.ln();
    }
    let z = z - 1.0;
    let mut a = LANCZOS_COEF[0];
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + a.ln()
}

/// ln C(n, k) via ln-gamma.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    assert!(k <= n);
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

// ---------------------------------------------------------------------------
// DiscretePMF
// ---------------------------------------------------------------------------

/// A probability mass function on consecutive integers.
///
/// `masses[i]` is the probability of outcome `offset + i`; `tail_mass` upper
/// bounds the probability of every outcome outside the stored window.
#[derive(Clone, Debug)]
pub struct DiscretePMF {
    pub offset: i64,
    pub masses: Vec<f64>,
    pub tail_mass: f64,
}

impl DiscretePMF {
    /// Builds a PMF, clamping tiny negative masses (from floating
    /// subtraction) to zero and rejecting anything below `-1e-15`.
    pub fn new(offset: i64, mut masses: Vec<f64>, tail_mass: f64) -> Result<Self> {
        for m in &mut masses {
            if *m < 0.0 {
                if *m < -NEG_MASS_TOL {
                    return Err(Error::Invariant(format!(
                        "mass {m} below clamping tolerance -1e-15"
                    )));
                }
                *m = 0.0;
            }
        }
        if tail_mass < 0.0 {
            return Err(Error::Invariant(format!("negative tail mass {tail_mass}")));
        }
        let total = ksum(&masses) + tail_mass;
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::Invariant(format!(
                "masses + tail sum to {total}, outside 1 ± 1e-12"
            )));
        }
        Ok(Self {
            offset,
            masses,
            tail_mass,
        })
    }

    /// Point mass at `k`.
    pub fn point(k: i64) -> Self {
        Self {
            offset: k,
            masses: vec![1.0],
            tail_mass: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// Mass at absolute outcome `v` (0 outside the window).
    pub fn mass_at(&self, v: i64) -> f64 {
        let idx = v - self.offset;
        if idx < 0 || idx as usize >= self.masses.len() {
            0.0
        } else {
            self.masses[idx as usize]
        }
    }

    /// Last stored outcome value.
    pub fn last(&self) -> i64 {
        self.offset + self.masses.len() as i64 - 1
    }

    /// Mean of the stored window (tail excluded).
    pub fn mean(&self) -> f64 {
        let mut acc = Kahan::new();
        for (i, &m) in self.masses.iter().enumerate() {
            acc.add((self.offset + i as i64) as f64 * m);
        }
        acc.value()
    }

    /// The same distribution shifted by `k` (i.e. the law of `X + k`).
    pub fn shifted(&self, k: i64) -> Self {
        Self {
            offset: self.offset + k,
            masses: self.masses.clone(),
            tail_mass: self.tail_mass,
        }
    }

    /// The law of `factor * X` for a nonzero integer `factor`. Intermediate
    /// outcomes that are not multiples of `factor` get zero mass; negative
    /// factors reflect the window (any unaccounted tail mass keeps its
    /// magnitude — the uncertainty bar does not care where it sits).
    pub fn scaled(&self, factor: i64) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Parameter("scale factor must be nonzero".into()));
        }
        if factor < 0 {
            let mut masses = self.masses.clone();
            masses.reverse();
            let reflected = Self {
                offset: -self.last(),
                masses,
                tail_mass: self.tail_mass,
            };
            return reflected.scaled(-factor);
        }
        if factor == 1 || self.masses.len() <= 1 {
            let mut out = self.clone();
            out.offset *= factor;
            return Ok(out);
        }
        let mut masses = vec![0.0; (self.masses.len() - 1) * factor as usize + 1];
        for (i, &m) in self.masses.iter().enumerate() {
            masses[i * factor as usize] = m;
        }
        Ok(Self {
            offset: self.offset * factor,
            masses,
            tail_mass: self.tail_mass,
        })
    }

    /// Probability that the outcome is odd, over the stored window. The tail
    /// (≤ `tail_mass`, below every budget used here) has unknown parity and is
    /// excluded.
    pub fn parity_mass(&self) -> f64 {
        let mut acc = Kahan::new();
        for (i, &m) in self.masses.iter().enumerate() {
            if (self.offset + i as i64).rem_euclid(2) == 1 {
                acc.add(m);
            }
        }
        acc.value()
    }
}

// ---------------------------------------------------------------------------
// DistSpec
// ---------------------------------------------------------------------------

/// Symbolic description of an integer-valued distribution.
#[derive(Clone, Debug)]
pub enum DistSpec {
    Point(i64),
    Bernoulli(f64),
    Binomial { n: u64, p: f64 },
    Poisson(f64),
    /// Number of failures before the `r`-th success in Bernoulli(1-p) trials,
    /// generalized to real `r > 0`: pmf(k) ∝ Γ(k+r)/k! · p^k (1-p)^r.
    /// Mean p·r/(1-p); additive in `r` for fixed `p`.
    NegBinomial { r: f64, p: f64 },
    /// The law of `factor * X`.
    Scaled(Box<DistSpec>, i64),
    Convolution(Vec<DistSpec>),
    Mixture(Vec<(f64, DistSpec)>),
}

impl DistSpec {
    fn validate(&self) -> Result<()> {
        match self {
            DistSpec::Point(_) => Ok(()),
            DistSpec::Bernoulli(p) => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::Parameter(format!("bernoulli p={p} outside [0,1]")));
                }
                Ok(())
            }
            DistSpec::Binomial { p, .. } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::Parameter(format!("binomial p={p} outside [0,1]")));
                }
                Ok(())
            }
            DistSpec::Poisson(lambda) => {
                if !lambda.is_finite() || *lambda < 0.0 {
                    return Err(Error::Parameter(format!("poisson lambda={lambda} < 0")));
                }
                Ok(())
            }
            DistSpec::NegBinomial { r, p } => {
                if !r.is_finite() || *r <= 0.0 {
                    return Err(Error::Parameter(format!("negative binomial r={r} <= 0")));
                }
                if !(0.0..1.0).contains(p) {
                    return Err(Error::Parameter(format!(
                        "negative binomial p={p} outside [0,1)"
                    )));
                }
                Ok(())
            }
            DistSpec::Scaled(inner, factor) => {
                if *factor == 0 {
                    return Err(Error::Parameter("scale factor must be nonzero".into()));
                }
                inner.validate()
            }
            DistSpec::Convolution(parts) => {
                for p in parts {
                    p.validate()?;
                }
                Ok(())
            }
            DistSpec::Mixture(parts) => {
                if parts.is_empty() {
                    return Err(Error::Parameter("empty mixture".into()));
                }
                let mut total = Kahan::new();
                for (w, spec) in parts {
                    if *w < 0.0 {
                        return Err(Error::Parameter(format!("mixture weight {w} < 0")));
                    }
                    total.add(*w);
                    spec.validate()?;
                }
                if (total.value() - 1.0).abs() > NORM_TOL {
                    return Err(Error::Parameter(format!(
                        "mixture weights sum to {}, not 1",
                        total.value()
                    )));
                }
                Ok(())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// PMF construction
// ---------------------------------------------------------------------------

/// Materializes `spec` as a windowed PMF whose truncated tail is at most
/// `trunc_budget` per constituent distribution.
pub fn pmf_of(spec: &DistSpec, trunc_budget: f64) -> Result<DiscretePMF> {
    if !(trunc_budget > 0.0 && trunc_budget <= 1e-6) {
        return Err(Error::Parameter(format!(
            "truncation budget {trunc_budget} outside (0, 1e-6]"
        )));
    }
    spec.validate()?;
    build_pmf(spec, trunc_budget)
}

fn build_pmf(spec: &DistSpec, budget: f64) -> Result<DiscretePMF> {
    match spec {
        DistSpec::Point(k) => Ok(DiscretePMF::point(*k)),
        DistSpec::Bernoulli(p) => DiscretePMF::new(0, vec![1.0 - p, *p], 0.0),
        DistSpec::Binomial { n, p } => binomial_pmf(*n, *p, budget),
        DistSpec::Poisson(lambda) => poisson_pmf(*lambda, budget),
        DistSpec::NegBinomial { r, p } => neg_binomial_pmf(*r, *p, budget),
        DistSpec::Scaled(inner, factor) => build_pmf(inner, budget)?.scaled(*factor),
        DistSpec::Convolution(parts) => {
            let mut acc = DiscretePMF::point(0);
            for part in parts {
                let next = build_pmf(part, budget)?;
                acc = convolve(&acc, &next)?;
            }
            Ok(acc)
        }
        DistSpec::Mixture(parts) => {
            let pmfs: Vec<(f64, DiscretePMF)> = parts
                .iter()
                .map(|(w, s)| build_pmf(s, budget).map(|p| (*w, p)))
                .collect::<Result<_>>()?;
            mix(&pmfs)
        }
    }
}

/// Hard cap on window length; hitting it means the truncation budget is
/// effectively unattainable for these parameters.
const MAX_WINDOW: usize = 100_000_000;

/// Builds a unimodal pmf by walking multiplicative recurrences outward from
/// the mode.
///
/// `right_ratio(k)` is `pmf(k+1)/pmf(k)`, `left_ratio(k)` is `pmf(k-1)/pmf(k)`;
/// both must be exact rational expressions of `k` (a couple of ulps per step),
/// so a window of N entries accumulates only ~√N ulps of relative drift — a
/// direct ln-gamma evaluation at k ~ 10⁷ would instead carry ~1e-8 of error
/// from the (z+½)·ln(t) term alone and break normalization.
///
/// The geometric tail bounds require the ratios to be monotone toward the
/// support edges with supremum `max(ratio at the edge, asymptote)`; every
/// family below satisfies this. Masses are normalized by (window sum + tail
/// bound), so `sum(masses) + tail_mass = 1` holds by construction and the
/// reported tail is an upper bound on the mass actually discarded.
fn expand_from_mode(
    mode: i64,
    hi: Option<i64>,
    budget: f64,
    right_ratio: impl Fn(i64) -> f64,
    left_ratio: impl Fn(i64) -> f64,
    right_asymptote: f64,
) -> Result<DiscretePMF> {
    let lo = 0i64;
    let mut left: Vec<f64> = Vec::new(); // masses below the mode, descending k
    let mut right: Vec<f64> = vec![1.0]; // masses from the mode up, ascending k
    let mut sum = Kahan::new();
    sum.add(1.0);
    let mut kl = mode; // leftmost stored outcome
    let mut kr = mode; // rightmost stored outcome
    let mut ul = 1.0; // unnormalized mass at kl
    let mut ur = 1.0; // unnormalized mass at kr

    let right_tail = |kr: i64, ur: f64| -> f64 {
        match hi {
            Some(h) if kr >= h => 0.0,
            _ => {
                let first = ur * right_ratio(kr);
                let q = right_ratio(kr + 1).max(right_asymptote);
                if q >= 1.0 {
                    f64::INFINITY
                } else {
                    first / (1.0 - q)
                }
            }
        }
    };
    let left_tail = |kl: i64, ul: f64| -> f64 {
        if kl <= lo {
            0.0
        } else {
            let first = ul * left_ratio(kl);
            let q = if kl - 1 > lo {
                left_ratio(kl - 1)
            } else {
                0.0
            };
            if q >= 1.0 {
                f64::INFINITY
            } else {
                first / (1.0 - q)
            }
        }
    };

    loop {
        let tail = left_tail(kl, ul) + right_tail(kr, ur);
        if tail.is_finite() && tail <= budget * (sum.value() + tail) {
            let norm = sum.value() + tail;
            left.reverse();
            left.extend_from_slice(&right);
            for m in &mut left {
                *m /= norm;
            }
            return DiscretePMF::new(kl, left, tail / norm);
        }
        let cl = if kl > lo { ul * left_ratio(kl) } else { -1.0 };
        let cr = match hi {
            Some(h) if kr >= h => -1.0,
            _ => ur * right_ratio(kr),
        };
        if cl < 0.0 && cr < 0.0 {
            // Support exhausted: nothing was truncated at all.
            let norm = sum.value();
            left.reverse();
            left.extend_from_slice(&right);
            for m in &mut left {
                *m /= norm;
            }
            return DiscretePMF::new(kl, left, 0.0);
        }
        if cl >= cr {
            left.push(cl);
            sum.add(cl);
            ul = cl;
            kl -= 1;
        } else {
            right.push(cr);
            sum.add(cr);
            ur = cr;
            kr += 1;
        }
        if left.len() + right.len() > MAX_WINDOW {
            return Err(Error::Budget(format!(
                "truncation budget {budget} needs a window beyond {MAX_WINDOW} entries"
            )));
        }
    }
}

fn binomial_pmf(n: u64, p: f64, budget: f64) -> Result<DiscretePMF> {
    if n == 0 || p == 0.0 {
        return Ok(DiscretePMF::point(0));
    }
    if p == 1.0 {
        return Ok(DiscretePMF::point(n as i64));
    }
    let nf = n as f64;
    let mode = (((nf + 1.0) * p).floor()).min(nf) as i64;
    let odds = p / (1.0 - p);
    // pmf(k+1)/pmf(k) = (n-k)/(k+1) · p/(1-p): decreasing in k.
    let right_ratio = move |k: i64| (nf - k as f64) / (k as f64 + 1.0) * odds;
    // pmf(k-1)/pmf(k) = k/(n-k+1) · (1-p)/p: decreasing as k decreases.
    let left_ratio = move |k: i64| k as f64 / (nf - k as f64 + 1.0) / odds;
    expand_from_mode(mode, Some(n as i64), budget, right_ratio, left_ratio, 0.0)
}

fn poisson_pmf(lambda: f64, budget: f64) -> Result<DiscretePMF> {
    if lambda == 0.0 {
        return Ok(DiscretePMF::point(0));
    }
    let mode = lambda.floor() as i64;
    // pmf(k+1)/pmf(k) = λ/(k+1); pmf(k-1)/pmf(k) = k/λ.
    let right_ratio = move |k: i64| lambda / (k as f64 + 1.0);
    let left_ratio = move |k: i64| k as f64 / lambda;
    expand_from_mode(mode, None, budget, right_ratio, left_ratio, 0.0)
}

fn neg_binomial_pmf(r: f64, p: f64, budget: f64) -> Result<DiscretePMF> {
    if p == 0.0 {
        return Ok(DiscretePMF::point(0));
    }
    // pmf(k) ∝ Γ(k+r)/k! · p^k; mode ⌊p(r-1)/(1-p)⌋ for r > 1, else 0.
    let mode = if r > 1.0 {
        ((p * (r - 1.0)) / (1.0 - p)).floor().max(0.0) as i64
    } else {
        0
    };
    // pmf(k+1)/pmf(k) = p(k+r)/(k+1) → p monotonically (from above for r > 1,
    // from below for r < 1), so sup over the right tail is max(edge, p).
    let right_ratio = move |k: i64| p * (k as f64 + r) / (k as f64 + 1.0);
    // pmf(k-1)/pmf(k) = k/(p(k+r-1)); for r ≥ 1 this decreases as k decreases
    // (geometric bound valid); for r < 1 the mode is 0 and no left tail exists.
    let left_ratio = move |k: i64| k as f64 / (p * (k as f64 + r - 1.0));
    expand_from_mode(mode, None, budget, right_ratio, left_ratio, p)
}

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

/// Exact convolution of the stored windows; tails add (subadditivity of the
/// missed mass).
pub fn convolve(a: &DiscretePMF, b: &DiscretePMF) -> Result<DiscretePMF> {
    // Always slide the shorter window over the longer one: protocol audits
    // convolve multi-million-entry blankets with ~40-entry signal windows.
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut masses = vec![0.0; long.len() + short.len() - 1];
    for (i, &ms) in short.masses.iter().enumerate() {
        if ms == 0.0 {
            continue;
        }
        for (j, &ml) in long.masses.iter().enumerate() {
            masses[i + j] += ms * ml;
        }
    }
    // The window product sums to (1-τa)(1-τb); the analytically missing mass
    // is τa + τb - τa·τb. Take the larger of that and the observed deficit so
    // the reported tail stays an upper bound under floating error.
    let analytic = a.tail_mass + b.tail_mass - a.tail_mass * b.tail_mass;
    let sum = ksum(&masses);
    let tail = analytic.max(1.0 - sum).max(0.0);
    DiscretePMF::new(a.offset + b.offset, masses, tail)
}

/// Weighted mixture of PMFs; weights must sum to 1.
pub fn mix(parts: &[(f64, DiscretePMF)]) -> Result<DiscretePMF> {
    if parts.is_empty() {
        return Err(Error::Parameter("empty mixture".into()));
    }
    let mut wsum = Kahan::new();
    for (w, _) in parts {
        if *w < 0.0 {
            return Err(Error::Parameter(format!("mixture weight {w} < 0")));
        }
        wsum.add(*w);
    }
    if (wsum.value() - 1.0).abs() > NORM_TOL {
        return Err(Error::Parameter(format!(
            "mixture weights sum to {}, not 1",
            wsum.value()
        )));
    }
    let offset = parts.iter().map(|(_, p)| p.offset).min().unwrap();
    let end = parts.iter().map(|(_, p)| p.last()).max().unwrap();
    let mut masses = vec![0.0; (end - offset + 1) as usize];
    let mut tail = 0.0;
    for (w, p) in parts {
        let base = (p.offset - offset) as usize;
        for (i, &m) in p.masses.iter().enumerate() {
            masses[base + i] += w * m;
        }
        tail += w * p.tail_mass;
    }
    DiscretePMF::new(offset, masses, tail)
}

// ---------------------------------------------------------------------------
// Divergences
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DivergenceKind {
    TV,
    KL,
    CHI2,
}

/// Hockey-stick divergence Σ_x [p_x − e^ε·q_x]₊ over the stored windows.
///
/// Returns `(value, truncation_bar)`: outcomes outside `p`'s window can
/// contribute at most `p.tail_mass` more, so `value + truncation_bar` is a
/// certified upper bound on the untruncated divergence (outcomes where only
/// `q` was truncated are already counted in full, which errs on the large
/// side). Negative `eps` is meaningful and accepted.
pub fn hockey_stick(p: &DiscretePMF, q: &DiscretePMF, eps: f64) -> (f64, f64) {
    let scale = eps.exp();
    let mut acc = Kahan::new();
    let lo = p.offset;
    let hi = p.last();
    for v in lo..=hi {
        let diff = p.mass_at(v) - scale * q.mass_at(v);
        if diff > 0.0 {
            acc.add(diff);
        }
    }
    (acc.value().max(0.0), p.tail_mass)
}

/// Standard f-divergences over the stored windows. KL and χ² return
/// `f64::INFINITY` when `p` puts mass where `q` has none (support violation).
/// Truncated tails are excluded; at the default budget (1e-15) this is far
/// below every tolerance used by the audits.
pub fn divergence(p: &DiscretePMF, q: &DiscretePMF, kind: DivergenceKind) -> f64 {
    let lo = p.offset.min(q.offset);
    let hi = p.last().max(q.last());
    let mut acc = Kahan::new();
    match kind {
        DivergenceKind::TV => {
            for v in lo..=hi {
                acc.add((p.mass_at(v) - q.mass_at(v)).abs());
            }
            0.5 * acc.value()
        }
        DivergenceKind::KL => {
            for v in lo..=hi {
                let pv = p.mass_at(v);
                if pv == 0.0 {
                    continue;
                }
                let qv = q.mass_at(v);
                if qv == 0.0 {
                    return f64::INFINITY;
                }
                acc.add(pv * (pv / qv).ln());
            }
            acc.value().max(0.0)
        }
        DivergenceKind::CHI2 => {
            for v in lo..=hi {
                let pv = p.mass_at(v);
                let qv = q.mass_at(v);
                if qv == 0.0 {
                    if pv > 0.0 {
                        return f64::INFINITY;
                    }
                    continue;
                }
                let d = pv - qv;
                acc.add(d * d / qv);
            }
            acc.value().max(0.0)
        }
    }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Draws one sample from `spec`. Deterministic given the RNG state; all
/// samplers are exact (the generalized negative binomial uses its
/// gamma-Poisson mixture representation, which is an identity, not an
/// approximation).
pub fn sample<R: Rng + ?Sized>(spec: &DistSpec, rng: &mut R) -> i64 {
    match spec {
        DistSpec::Point(k) => *k,
        DistSpec::Bernoulli(p) => {
            if rng.gen::<f64>() < *p {
                1
            } else {
                0
            }
        }
        DistSpec::Binomial { n, p } => {
            if *p == 0.0 || *n == 0 {
                0
            } else if *p == 1.0 {
                *n as i64
            } else {
                rand_distr::Binomial::new(*n, *p).unwrap().sample(rng) as i64
            }
        }
        DistSpec::Poisson(lambda) => sample_poisson(*lambda, rng),
        DistSpec::NegBinomial { r, p } => sample_neg_binomial(*r, *p, rng),
        DistSpec::Scaled(inner, factor) => factor * sample(inner, rng),
        DistSpec::Convolution(parts) => parts.iter().map(|s| sample(s, rng)).sum(),
        DistSpec::Mixture(parts) => {
            let mut u = rng.gen::<f64>();
            for (w, s) in parts {
                if u < *w {
                    return sample(s, rng);
                }
                u -= w;
            }
            sample(&parts.last().unwrap().1, rng)
        }
    }
}

pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> i64 {
    if lambda == 0.0 {
        return 0;
    }
    rand_distr::Poisson::new(lambda).unwrap().sample(rng) as i64
}

/// NB(r, p) for real r > 0: Poisson with Gamma(shape=r, scale=p/(1-p)) mean.
pub fn sample_neg_binomial<R: Rng + ?Sized>(r: f64, p: f64, rng: &mut R) -> i64 {
    if p == 0.0 {
        return 0;
    }
    let scale = p / (1.0 - p);
    let lambda = rand_distr::Gamma::new(r, scale).unwrap().sample(rng);
    sample_poisson(lambda, rng)
}
