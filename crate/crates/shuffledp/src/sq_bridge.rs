//! Statistical-query simulation of dominated randomizers: an exact SQ
//! oracle with optional adversarial (worst-case within tolerance) noise, the
//! rejection sampler that draws from R(U) using O(e^ε) oracle queries, its
//! n-fold composition for i.i.d. transcripts, and an exact (no-sampling)
//! acceptance analysis for small alphabets.

use rand::Rng;

use crate::auditor::{DominationCertificate, RandomizerMatrix};
use crate::distlib::Kahan;
use crate::error::{Error, Result};

/// How the oracle perturbs the exact expectation. `WorstCaseWithinTau`
/// alternates the sign of a full-tolerance perturbation across calls,
/// stressing downstream error accounting while honoring the contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    None,
    WorstCaseWithinTau,
}

/// An oracle answering expectation queries about a fixed distribution over
/// a finite input space: given g: X → [-1,1] and tolerance τ, returns v with
/// |v - E_{x~D}[g(x)]| ≤ τ. Answers come from exact expectations plus a
/// bounded perturbation, so the error accounting stays exact.
#[derive(Clone, Debug)]
pub struct SQOracle {
    distribution: Vec<f64>,
    mode: NoiseMode,
    queries: u64,
    flip: bool,
}

impl SQOracle {
    pub fn new(distribution: Vec<f64>, mode: NoiseMode) -> Result<Self> {
        if distribution.is_empty() || distribution.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::Parameter("oracle distribution must be nonnegative".into()));
        }
        let total: f64 = distribution.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "oracle distribution sums to {total}, not 1"
            )));
        }
        Ok(Self {
            distribution,
            mode,
            queries: 0,
            flip: false,
        })
    }

    pub fn distribution(&self) -> &[f64] {
        &self.distribution
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    /// One statistical query. The contract |v - g(D)| ≤ τ is re-checked on
    /// every call; a violation is an internal invariant failure.
    pub fn query(&mut self, g: &[f64], tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Parameter(format!("tolerance {tau} outside (0,1)")));
        }
        if g.len() != self.distribution.len() {
            return Err(Error::Parameter("query function length mismatch".into()));
        }
        if g.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-12) {
            return Err(Error::Parameter("query values must lie in [-1, 1]".into()));
        }
        let mut acc = Kahan::new();
        for (gv, p) in g.iter().zip(&self.distribution) {
            acc.add(gv * p);
        }
        let exact = acc.value();
        self.queries += 1;
        let v = match self.mode {
            NoiseMode::None => exact,
            NoiseMode::WorstCaseWithinTau => {
                self.flip = !self.flip;
                let sign = if self.flip { 1.0 } else { -1.0 };
                (exact + sign * tau).clamp(-1.0, 1.0)
            }
        };
        if (v - exact).abs() > tau + 1e-15 {
            return Err(Error::Invariant(format!(
                "oracle answer {v} strays beyond τ = {tau} from {exact}"
            )));
        }
        Ok(v)
    }
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let mut u = rng.gen::<f64>();
    let mut last_positive = 0usize;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last_positive = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last_positive
}

/// The acceptance-test function g_z over inputs: g_z(x) = min(1, f_z(x))
/// with f_z(x) = p_{x,z}/(e^ε·D_z).
fn acceptance_function(r: &RandomizerMatrix, cert: &DominationCertificate, z: usize) -> Vec<f64> {
    let denom = cert.epsilon_star.exp() * cert.dominating[z];
    r.rows
        .iter()
        .map(|row| if denom > 0.0 { (row[z] / denom).min(1.0) } else { 1.0 })
        .collect()
}

const MAX_REJECTION_ROUNDS: u64 = 1_000_000;

/// One draw from R(U) via rejection sampling against the certificate's
/// dominating distribution: sample z ~ D, query g_z at tolerance β/e^ε,
/// accept with probability max(ĝ_z, 0). Returns the message and the number
/// of oracle queries spent.
pub fn simulate_dominated<R: Rng + ?Sized>(
    r: &RandomizerMatrix,
    cert: &DominationCertificate,
    beta: f64,
    oracle: &mut SQOracle,
    rng: &mut R,
) -> Result<(usize, u64)> {
    r.validate()?;
    if !(beta > 0.0 && beta < 1.0 / 3.0) {
        return Err(Error::Parameter(format!("beta {beta} outside (0, 1/3)")));
    }
    if beta < cert.residual_delta {
        return Err(Error::Precondition(format!(
            "beta {beta} below the certificate's residual δ = {}",
            cert.residual_delta
        )));
    }
    if oracle.distribution().len() != r.num_inputs() {
        return Err(Error::Parameter("oracle input space mismatch".into()));
    }
    cert.check(r, 1e-9).map_err(|e| {
        Error::BrokenCertificate(format!("certificate does not dominate the randomizer: {e}"))
    })?;
    let tau = beta / cert.epsilon_star.exp();
    let mut spent = 0u64;
    for _ in 0..MAX_REJECTION_ROUNDS {
        let z = sample_index(&cert.dominating, rng);
        let g = acceptance_function(r, cert, z);
        let estimate = oracle.query(&g, tau)?;
        spent += 1;
        let accept = estimate.clamp(0.0, 1.0);
        if accept > 0.0 && rng.gen::<f64>() < accept {
            return Ok((z, spent));
        }
    }
    Err(Error::BrokenCertificate(format!(
        "no acceptance in {MAX_REJECTION_ROUNDS} rounds; the certificate does not \
         describe this randomizer at the queried distribution"
    )))
}

/// n i.i.d. simulated draws from R(U), each run at the per-sample error
/// budget β/n so the whole transcript stays within O(β) statistical error.
/// Returns the messages and the total query count.
pub fn simulate_shuffle_by_sq<R: Rng + ?Sized>(
    r: &RandomizerMatrix,
    cert: &DominationCertificate,
    n: usize,
    beta: f64,
    oracle: &mut SQOracle,
    rng: &mut R,
) -> Result<(Vec<usize>, u64)> {
    if n == 0 {
        return Err(Error::Parameter("need at least one user".into()));
    }
    let per_sample = beta / n as f64;
    let mut messages = Vec::with_capacity(n);
    let mut total = 0u64;
    for _ in 0..n {
        let (z, spent) = simulate_dominated(r, cert, per_sample, oracle, rng)?;
        messages.push(z);
        total += spent;
    }
    Ok((messages, total))
}

/// Which fixed within-tolerance answers the exact analysis assumes.
#[derive(Clone, Copy, Debug)]
pub enum EstimatePattern {
    /// ĝ_z = g_z(U): the noiseless oracle.
    Exact,
    /// ĝ_z = g_z(U) + τ for every z.
    PlusTau,
    /// ĝ_z = g_z(U) - τ for every z.
    MinusTau,
    /// Signs alternate with z.
    Alternating,
}

#[derive(Clone, Debug)]
pub struct AcceptanceAnalysis {
    /// Exact conditional output distribution of the rejection sampler under
    /// the assumed estimates.
    pub output: Vec<f64>,
    /// Per-message interval the proof guarantees the output lies in.
    pub interval: Vec<(f64, f64)>,
    /// The target distribution R(U).
    pub true_output: Vec<f64>,
    /// Per-round termination probability under the assumed estimates.
    pub stop_probability: f64,
    /// Exact total variation between `output` and `true_output`.
    pub tv_to_true: f64,
}

/// Closed-form acceptance analysis (no sampling): with fixed estimates
/// ĝ_z within ±τ of g_z(U), the sampler's output law is
/// D_z·max(ĝ_z,0)/Σ_w D_w·max(ĝ_w,0), which must land inside
/// I_z = [D_z(g_z(U)-τ)e^ε/(1+3β), D_z(g_z(U)+τ)e^ε/(1-3β)].
pub fn exact_acceptance_analysis(
    r: &RandomizerMatrix,
    cert: &DominationCertificate,
    beta: f64,
    u: &[f64],
    pattern: EstimatePattern,
) -> Result<AcceptanceAnalysis> {
    r.validate()?;
    if r.tuple_count() > 64 {
        return Err(Error::Scale(
            "exact acceptance analysis capped at 64 output tuples".into(),
        ));
    }
    if !(beta > 0.0 && beta < 1.0 / 3.0) {
        return Err(Error::Parameter(format!("beta {beta} outside (0, 1/3)")));
    }
    if beta < cert.residual_delta {
        return Err(Error::Precondition("beta below certificate residual".into()));
    }
    if u.len() != r.num_inputs() || (u.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter("u must be a distribution over inputs".into()));
    }
    cert.check(r, 1e-9)?;
    let grow = cert.epsilon_star.exp();
    let tau = beta / grow;
    let m = r.tuple_count();

    let mut output = vec![0.0f64; m];
    let mut interval = vec![(0.0f64, 0.0f64); m];
    let mut true_output = vec![0.0f64; m];
    let mut stop = Kahan::new();
    for z in 0..m {
        let g = acceptance_function(r, cert, z);
        let g_u: f64 = g.iter().zip(u).map(|(a, b)| a * b).sum();
        let sign = match pattern {
            EstimatePattern::Exact => 0.0,
            EstimatePattern::PlusTau => 1.0,
            EstimatePattern::MinusTau => -1.0,
            EstimatePattern::Alternating => {
                if z % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        let estimate = (g_u + sign * tau).clamp(-1.0, 1.0);
        let d_z = cert.dominating[z];
        output[z] = d_z * estimate.clamp(0.0, 1.0);
        stop.add(output[z]);
        interval[z] = (
            (d_z * (g_u - tau) * grow / (1.0 + 3.0 * beta)).max(0.0),
            d_z * (g_u + tau) * grow / (1.0 - 3.0 * beta),
        );
        for (x, &ux) in u.iter().enumerate() {
            true_output[z] += ux * r.rows[x][z];
        }
    }
    let stop_probability = stop.value();
    if stop_probability <= 0.0 {
        return Err(Error::BrokenCertificate(
            "acceptance probability is exactly zero under these estimates".into(),
        ));
    }
    for o in output.iter_mut() {
        *o /= stop_probability;
    }
    let tv_to_true = 0.5
        * output
            .iter()
            .zip(&true_output)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    Ok(AcceptanceAnalysis {
        output,
        interval,
        true_output,
        stop_probability,
        tv_to_true,
    })
}
