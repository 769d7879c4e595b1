//! End-to-end checks that wire the modules together at pinned parameters.
//!
//! Each check returns a [`CheckOutcome`] whose summary fits on one line; the
//! `acceptance` integration test target prints exactly one verdict line per
//! check. Every tolerance, seed, and trial count is fixed here, in code.
//! Calibrated constants ([`ACCURACY_C`], [`WEAK_LOCAL_C`]) were measured once
//! on larger disjoint seed sets and are frozen; the checks run fresh seeds
//! against the frozen values.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::auditor::{
    audit_protocol_1d, dominated_kl_check, exact_shuffle_divergence, find_min_domination,
    hs_exact, hs_lower_bound, hist_distribution, level1_family, parseval_family,
    poisson_tv_bound, poisson_tv_empirical, pseudo_local_check, RandomizerMatrix, WKind,
};
use crate::countdistinct::{
    analyze_from_parity_count, pc_run, sample_parity_sum, sample_total_messages,
    set_global_constants, local_weak_constants, local_weak_sample_parity_sum,
};
use crate::distlib::{hockey_stick, pmf_of, DistSpec, Kahan};
use crate::hardness::{
    expected_distinct, match_moments, sample_parity_mixture, MomentPair, ParityMixtureSpec,
};
use crate::selection::{sel_planted_run, sel_setup};
use crate::shuffle_core::{Dataset, PublicRandomness};
use crate::sq_bridge::{simulate_dominated, NoiseMode, SQOracle};

/// Error budget multiplier for the count-distinct estimator at the reference
/// point (n = 10⁵, D = 10³, ε = 1, δ = 10⁻⁵), in units of √D/ε. Calibrated
/// once over 2000 disjoint-seed trials (max observed 371.8, median ≈ 66.7
/// units) and frozen. The size is dominated by the estimator's inversion
/// factor 2e^{ε₀}/(e^{ε₀}−1) ≈ 201 at the per-coordinate budget ε₀ = 0.01.
pub const ACCURACY_C: f64 = 380.0;

/// Same role for the weak-privacy local protocol at n = 10⁴, in units of √n.
/// Calibrated over 2000 disjoint-seed trials (max observed 5.55) and frozen.
pub const WEAK_LOCAL_C: f64 = 6.0;

/// One acceptance check's verdict.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub label: &'static str,
    pub pass: bool,
    pub summary: String,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} — {}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.label,
            self.summary
        )
    }
}

// ---------------------------------------------------------------------------
// 1. Parity identity
// ---------------------------------------------------------------------------

/// The send probability q′ solves (1−2q′)^n = 1−e^{−ε₀} exactly, so the
/// parity of an unheld coordinate's count Bin(n, q′) is Ber(e^{−ε₀}/2).
/// Verified against the exact windowed binomial pmf to 1e−12.
pub fn parity_identity() -> CheckOutcome {
    let mut worst = 0.0f64;
    for eps0 in [0.01f64, 0.1] {
        let target = (-eps0).exp() / 2.0;
        let ln_base = (-(-eps0).exp()).ln_1p();
        for n in [1u64, 10, 1_000, 100_000] {
            let q = -(ln_base / n as f64).exp_m1() / 2.0;
            let pmf = pmf_of(&DistSpec::Binomial { n, p: q }, 1e-18).unwrap();
            worst = worst.max((pmf.parity_mass() - target).abs());
        }
    }
    CheckOutcome {
        label: "parity identity",
        pass: worst <= 1e-12,
        summary: format!(
            "max |parity_mass(Bin(n,q')) - e^(-eps0)/2| = {worst:.3e} over n in \
             {{1,10,1e3,1e5}} x eps0 in {{0.01,0.1}} (tol 1e-12)"
        ),
    }
}

// ---------------------------------------------------------------------------
// 2. Single-coordinate privacy audit
// ---------------------------------------------------------------------------

/// Both directed hockey-stick divergences at ε/2 between the aggregate laws
/// of an unheld and a held coordinate, plus the pmf truncation bar, must stay
/// within δ/3 across the parameter grid.
pub fn privacy_audit() -> CheckOutcome {
    let mut worst_ratio = 0.0f64;
    let mut all = true;
    for n in [10_000u64, 100_000] {
        for eps in [0.5f64, 1.0] {
            for delta in [1e-5f64, 1e-6] {
                let params = set_global_constants(n, eps, delta).unwrap();
                let a = audit_protocol_1d(&params, 0).unwrap();
                let budget = delta / 3.0;
                let value = a.forward.max(a.backward) + a.truncation;
                all &= value <= budget;
                worst_ratio = worst_ratio.max(value / budget);
            }
        }
    }
    CheckOutcome {
        label: "privacy audit",
        pass: all,
        summary: format!(
            "max (divergence + truncation)/(delta/3) = {worst_ratio:.3e} over \
             (n, eps, delta) in {{1e4,1e5}} x {{0.5,1}} x {{1e-5,1e-6}}, both directions"
        ),
    }
}

// ---------------------------------------------------------------------------
// 3. Estimator accuracy at the reference point
// ---------------------------------------------------------------------------

/// 100 fresh-seed trials of the count-distinct estimator at n = 10⁵,
/// D = 10³, ε = 1, δ = 10⁻⁵ with 500 distinct values held. Trials sample the
/// exact aggregate law (held coordinates have fair parity, unheld ones parity
/// Ber(e^{−ε₀}/2); the even blanket never moves a parity).
pub fn estimator_accuracy() -> CheckOutcome {
    let params = set_global_constants(100_000, 1.0, 1e-5).unwrap();
    let d = 1_000u64;
    let held = 500u64;
    let tau = params.epsilon0.exp();
    let bound = ACCURACY_C * (d as f64).sqrt() / params.epsilon;
    let mut errors: Vec<f64> = (0..100u64)
        .map(|t| {
            let mut rng = ChaCha20Rng::seed_from_u64(7_000 + t);
            let c = sample_parity_sum(held, d, &params, &mut rng) as f64;
            (analyze_from_parity_count(c, d, tau) - held as f64).abs()
        })
        .collect();
    errors.sort_by(|a, b| a.total_cmp(b));
    let within = errors.iter().filter(|e| **e <= bound).count();
    let median = (errors[49] + errors[50]) / 2.0;
    CheckOutcome {
        label: "estimator accuracy",
        pass: within >= 95,
        summary: format!(
            "|z - 500| <= {bound:.0} (c = {ACCURACY_C}) in {within}/100 trials; \
             median error {median:.0}, worst {:.0}",
            errors[99]
        ),
    }
}

// ---------------------------------------------------------------------------
// 4. Message complexity
// ---------------------------------------------------------------------------

/// (a) The public-coin protocol must average ≤ 1 message per user at
/// n = 10⁵ (at these parameters its bucket budget collapses to the trivial
/// zero-communication regime, which satisfies the budget with mean 0).
/// (b) One exact-law draw of the base protocol's total message count over
/// 10⁵ users at D = 10³ must land within 3σ of the analytic mean
/// n·(½ + D·(q′ + 2·E[NB(r/n, p)])).
pub fn message_complexity() -> CheckOutcome {
    let n = 100_000u64;
    let d = 1_000u64;

    let entries: Vec<u64> = (0..n).map(|i| (i % 500) + 1).collect();
    let dataset = Dataset::new(d, entries).unwrap();
    let public = PublicRandomness::new(77);
    let pc = pc_run(&dataset, 1.0, 1e-5, &public, 424_301).unwrap();
    let pc_mean = pc.messages_total as f64 / n as f64;
    let pass_pc = pc_mean <= 1.0;

    let params = set_global_constants(n, 1.0, 1e-5).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(321);
    let total = sample_total_messages(n, d, &params, &mut rng) as f64;
    let analytic = n as f64 * params.expected_messages(d, 1.0);
    let q = params.q_prime;
    let var = n as f64 * 0.25
        + (n * d) as f64 * q * (1.0 - q)
        + 4.0 * params.r * d as f64 * params.p / ((1.0 - params.p) * (1.0 - params.p));
    let sigma = var.sqrt();
    let dev = (total - analytic) / sigma;
    let pass_base = dev.abs() <= 3.0;

    CheckOutcome {
        label: "message complexity",
        pass: pass_pc && pass_base,
        summary: format!(
            "public-coin mean {pc_mean:.3} msgs/user (trivial regime: {}); base total \
             {total:.0} vs analytic {analytic:.0} ({dev:+.2} sigma, sigma = {sigma:.0})",
            pc.trivial_regime
        ),
    }
}

// ---------------------------------------------------------------------------
// 5. Weak-privacy local protocol
// ---------------------------------------------------------------------------

/// (a) The exact local ratio bound ε_local = ln((1−q′)/q′) stays within
/// ln n + 3 for n ∈ {10², 10³, 10⁴}. (b) At n = 10⁴ with 5000 values held,
/// the estimator error stays within WEAK_LOCAL_C·√n in ≥ 95 of 100 trials.
pub fn weak_local_protocol() -> CheckOutcome {
    let mut eps_margin = f64::NEG_INFINITY;
    let mut pass_eps = true;
    for n in [100u64, 1_000, 10_000] {
        let lw = local_weak_constants(n);
        let eps_local = lw.local_epsilon();
        let cap = (n as f64).ln() + 3.0;
        pass_eps &= eps_local <= cap;
        eps_margin = eps_margin.max(eps_local - cap);
    }

    let n = 10_000u64;
    let lw = local_weak_constants(n);
    let held = 5_000u64;
    let bound = WEAK_LOCAL_C * (n as f64).sqrt();
    let tau = 1.0f64.exp();
    let mut errors: Vec<f64> = (0..100u64)
        .map(|t| {
            let mut rng = ChaCha20Rng::seed_from_u64(9_100 + t);
            let c = local_weak_sample_parity_sum(held, &lw, &mut rng) as f64;
            (analyze_from_parity_count(c, n, tau) - held as f64).abs()
        })
        .collect();
    errors.sort_by(|a, b| a.total_cmp(b));
    let within = errors.iter().filter(|e| **e <= bound).count();

    CheckOutcome {
        label: "weak-privacy local protocol",
        pass: pass_eps && within >= 95,
        summary: format!(
            "eps_local - (ln n + 3) <= {eps_margin:.3} over n in {{1e2,1e3,1e4}}; \
             |z - 5000| <= {bound:.0} (c = {WEAK_LOCAL_C}) in {within}/100 trials at n = 1e4, \
             median {:.0}",
            (errors[49] + errors[50]) / 2.0
        ),
    }
}

// ---------------------------------------------------------------------------
// 6. Moment-matched pair gap
// ---------------------------------------------------------------------------

/// The shared order-8 pair used here and by the Poisson-mixture check.
fn l8_pair() -> &'static MomentPair {
    static PAIR: OnceLock<MomentPair> = OnceLock::new();
    PAIR.get_or_init(|| match_moments(8, 128.0, 0.5).unwrap())
}

/// Independent high-precision recomputation of the scaled moment deviations
/// |E[U^j] − E[V^j]|/Λ^j: exact big-rational arithmetic over the pair's
/// (exactly representable) f64 support and masses, no shared code with the
/// f64 Kahan evaluation inside `MomentPair`.
fn exact_scaled_gaps(pair: &MomentPair) -> Vec<f64> {
    let lambda = BigRational::from_float(pair.lambda).unwrap();
    (1..=pair.l_order)
        .map(|j| {
            let mut acc = BigRational::zero();
            for (k, &x) in pair.support.iter().enumerate() {
                let xr = BigRational::from_float(x).unwrap();
                let du = BigRational::from_float(pair.u_masses[k]).unwrap()
                    - BigRational::from_float(pair.v_masses[k]).unwrap();
                acc += du * xr.pow(j as i32);
            }
            (acc / lambda.clone().pow(j as i32)).abs().to_f64().unwrap()
        })
        .collect()
}

/// Maximizing U₀ − V₀ subject to matched moments of order ≤ L on the grid
/// {0} ∪ {1, 1.5, …, Λ}. The design target was a gap above 0.9 at some
/// Λ ≤ 40·L² for L ∈ {4, 6, 8}; the target is not attainable there, and this
/// check reports the measured optimum honestly instead of relaxing it:
///   · L = 4 is solved at its full budget Λ = 640. The grids nest as Λ
///     grows (every feasible pair for Λ′ ≤ 640 is feasible at 640), so the
///     optimum is nondecreasing in Λ and the Λ = 640 value bounds every
///     smaller budget. Measured: ≈ 0.7875 < 0.9.
///   · L = 6 and L = 8 are solved at Λ = 160 / 128 (their full budgets,
///     Λ = 1440 / 2560, are linear programs with ~3k/5k exact-rational
///     variables — hours of single-core simplex, outside this suite's
///     runtime budget). Extra moment constraints only shrink the feasible
///     set, so their optima at any Λ are at most the L = 4 optimum there.
///   · The solver itself is cross-validated against the closed-form L = 2
///     optimum (1 − 1/√Λ)²: at the maximizing second moment s = √Λ the best
///     pair is U = (1−1/s)δ₀ + (1/s)δ_s against V supported on {0, 1, Λ}
///     with V₀ = (s−1)/Λ. With Λ = 100 the grid contains s = 10 and the
///     optimum is exactly 0.81.
/// Moment matching to 1e−9 is asserted for every solved pair, with the
/// exact-rational recomputation required to agree with the f64 evaluation.
pub fn moment_matching_gap() -> CheckOutcome {
    let closed_form = match_moments(2, 100.0, 0.5).unwrap();
    let solver_ok = (closed_form.gap - 0.81).abs() <= 1e-12;

    let mut gaps = Vec::new();
    let mut matched = true;
    let mut recheck_agree = true;
    for (l, lambda) in [(4u32, 640.0f64), (6, 160.0), (8, 128.0)] {
        let owned;
        let pair: &MomentPair = if l == 8 {
            l8_pair()
        } else {
            owned = match_moments(l, lambda, 0.5).unwrap();
            &owned
        };
        pair.verify(1e-9).unwrap();
        let fast = pair.scaled_moment_gaps();
        let exact = exact_scaled_gaps(pair);
        for (f, e) in fast.iter().zip(&exact) {
            matched &= *e <= 1e-9;
            recheck_agree &= (f - e).abs() <= 1e-12;
        }
        gaps.push((l, lambda, pair.gap));
    }
    let all_above = gaps.iter().all(|(_, _, g)| *g > 0.9);
    let detail: Vec<String> = gaps
        .iter()
        .map(|(l, lam, g)| format!("L={l}: {g:.4} at Lambda={lam}"))
        .collect();
    CheckOutcome {
        label: "moment-matched pair gap",
        pass: all_above && matched && recheck_agree && solver_ok,
        summary: format!(
            "gap > 0.9 unreached within the Lambda <= 40*L^2 budget: {} (L=4 solved at its \
             full budget; nested grids make the optimum monotone in Lambda, and more moment \
             constraints only lower it); moments matched to 1e-9 = {matched}, exact-rational \
             recheck agrees = {recheck_agree}, closed-form L=2 optimum reproduced = {solver_ok}",
            detail.join("; ")
        ),
    }
}

// ---------------------------------------------------------------------------
// 7. Poisson-mixture total variation
// ---------------------------------------------------------------------------

/// With the order-8 pair, θ uniform over 16 coordinates and λ = 2Λ²θ: the
/// analytic bound Σ_{z>8}(Λ²‖α‖₁)^z/z! must stay below 1/8!, and the
/// empirical TV between 10⁵-sample total-count histograms of the two
/// Poissonized mixtures must stay below √(1/8!) + 3·bootstrap-σ.
pub fn poisson_mixture_tv() -> CheckOutcome {
    let pair = l8_pair();
    let dim = 16usize;
    let theta = vec![1.0 / dim as f64; dim];
    let lambda: Vec<f64> = theta
        .iter()
        .map(|t| 2.0 * pair.lambda * pair.lambda * t)
        .collect();
    let report = poisson_tv_bound(pair, &theta, &lambda, 8).unwrap();
    let cap = 1.0 / 40_320.0; // 1/8!
    let analytic_ok = report.precondition_ok && report.bound_tv_squared <= cap;

    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let (tv, sigma) = poisson_tv_empirical(pair, &theta, &lambda, 100_000, 8, 200, &mut rng).unwrap();
    let threshold = cap.sqrt() + 3.0 * sigma;
    CheckOutcome {
        label: "Poisson-mixture TV",
        pass: analytic_ok && tv <= threshold,
        summary: format!(
            "analytic TV^2 bound {:.3e} <= 1/8! = {cap:.3e} (precondition {}); empirical TV \
             {tv:.5} <= sqrt(1/8!) + 3*bootstrap-sigma = {threshold:.5}",
            report.bound_tv_squared, report.precondition_ok
        ),
    }
}

// ---------------------------------------------------------------------------
// 8. Parity-mixture distinct count
// ---------------------------------------------------------------------------

/// n = 2¹⁴ mixture draws over the n-point cube: the distinct count must land
/// within 10√n of (1 − e^{−1}cosh α)·n in ≥ 99 of 100 seeds, for
/// α ∈ {0, 0.05, 0.1}.
pub fn parity_mixture_distinct() -> CheckOutcome {
    let d = 14u32;
    let n = 1u64 << d;
    let radius = 10.0 * (n as f64).sqrt();
    let mut counts = Vec::new();
    let mut pass = true;
    let mut worst_dev = 0.0f64;
    for (i, alpha) in [0.0f64, 0.05, 0.1].into_iter().enumerate() {
        let spec = ParityMixtureSpec {
            d,
            ell: 0,
            s: 1,
            alpha,
        };
        let center = expected_distinct(alpha, n);
        let mut hits = 0u32;
        for t in 0..100u64 {
            let mut rng = ChaCha20Rng::seed_from_u64(11_000 + 1_000 * i as u64 + t);
            let ds = sample_parity_mixture(&spec, n, &mut rng).unwrap();
            let dev = (ds.distinct_nonzero() as f64 - center).abs();
            worst_dev = worst_dev.max(dev / (n as f64).sqrt());
            if dev <= radius {
                hits += 1;
            }
        }
        pass &= hits >= 99;
        counts.push(format!("alpha={alpha}: {hits}/100"));
    }
    CheckOutcome {
        label: "parity-mixture distinct count",
        pass,
        summary: format!(
            "within 10*sqrt(n) of (1 - cosh(alpha)/e)*n at n = 2^14: {}; worst deviation \
             {worst_dev:.2} sqrt(n)",
            counts.join(", ")
        ),
    }
}

// ---------------------------------------------------------------------------
// 9. Dominated-protocol machinery
// ---------------------------------------------------------------------------

/// (a) On 100 random single-message randomizers the fitted domination level
/// ε* never exceeds the exact worst-case log ratio (any ε-ratio-bounded
/// randomizer is (ε, 0)-dominated), and each certificate verifies.
/// (b) On 100 random dominated instances over the 4-cube (50 with the
/// parity-direction family and the quadratic envelope, 50 with the
/// single-coordinate family and the logarithmic envelope) the averaged-KL
/// bound holds: lhs ≤ 2·W(2e^ε) + 4δ at the certificate's ε.
/// (c) The pseudo-local inequality holds on every enumerable instance with
/// n ≤ 4 users and message arity ≤ 2: six fixed randomizers, ε ∈ {0.3, 0.8},
/// with δ set to the exact shuffle divergence over the defining neighbor
/// pairs (both directions).
pub fn dominated_machinery() -> CheckOutcome {
    use rand::Rng;

    // (a) domination level vs exact ratio bound.
    let mut rng = ChaCha20Rng::seed_from_u64(0xD0A);
    let mut worst_slack = f64::NEG_INFINITY;
    let mut pass_a = true;
    for i in 0..100usize {
        let inputs = 2 + i % 3;
        let alphabet = 2 + (i / 3) % 3;
        let rows: Vec<Vec<f64>> = (0..inputs)
            .map(|_| {
                let raw: Vec<f64> = (0..alphabet).map(|_| 0.02 + rng.gen::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let r = RandomizerMatrix::single_message(rows.clone());
        let cert = find_min_domination(&r, 0.0).unwrap();
        cert.check(&r, 1e-9).unwrap();
        let mut eps_ldp = 0.0f64;
        for z in 0..alphabet {
            for x in 0..inputs {
                for y in 0..inputs {
                    eps_ldp = eps_ldp.max((rows[x][z] / rows[y][z]).ln());
                }
            }
        }
        pass_a &= cert.epsilon_star <= eps_ldp + 1e-9;
        worst_slack = worst_slack.max(cert.epsilon_star - eps_ldp);
    }

    // (b) averaged-KL bound on random dominated instances.
    let d = 4u32;
    let inputs = 1usize << d;
    let mu = vec![1.0 / inputs as f64; inputs];
    let families = [
        ("quadratic", WKind::Parseval { alpha: 0.6, d }),
        ("logarithmic", WKind::Level1 { d }),
    ];
    let mut pass_b = true;
    let mut min_margin = f64::INFINITY;
    for (name, kind) in families {
        let (family, weights) = match name {
            "quadratic" => parseval_family(d, 0.6).unwrap(),
            _ => level1_family(d).unwrap(),
        };
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..inputs)
                .map(|_| {
                    let raw: Vec<f64> = (0..4).map(|_| 0.02 + rng.gen::<f64>()).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(|v| v / s).collect()
                })
                .collect();
            let r = RandomizerMatrix::single_message(rows);
            let cert = find_min_domination(&r, 0.0).unwrap();
            let (lhs, rhs) =
                dominated_kl_check(&r, &family, &mu, &weights, cert.epsilon_star, 0.0, kind)
                    .unwrap();
            pass_b &= lhs <= rhs + 1e-12;
            min_margin = min_margin.min(rhs - lhs);
        }
    }

    // (c) pseudo-local inequality on all enumerable small instances.
    let two_message = |p1: f64, p2: f64| -> RandomizerMatrix {
        let rr = |p: f64, x: usize| [if x == 0 { p } else { 1.0 - p }, if x == 0 { 1.0 - p } else { p }];
        let rows = (0..2usize)
            .map(|x| {
                let a = rr(p1, x);
                let b = rr(p2, x);
                // tuple index encodes (first, second) little-endian.
                (0..4).map(|t| a[t % 2] * b[t / 2]).collect()
            })
            .collect();
        RandomizerMatrix {
            alphabet: 2,
            arity: 2,
            rows,
        }
    };
    let instances = vec![
        RandomizerMatrix::single_message(vec![vec![0.6, 0.4], vec![0.4, 0.6]]),
        RandomizerMatrix::single_message(vec![vec![0.75, 0.25], vec![0.25, 0.75]]),
        RandomizerMatrix::single_message(vec![vec![0.9, 0.1], vec![0.1, 0.9]]),
        RandomizerMatrix::single_message(vec![
            vec![0.7, 0.2, 0.1],
            vec![0.15, 0.7, 0.15],
            vec![0.1, 0.2, 0.7],
        ]),
        two_message(0.75, 0.75),
        two_message(0.9, 0.6),
    ];
    let mut pass_c = true;
    let mut checked = 0u32;
    for r in &instances {
        for eps in [0.3f64, 0.8] {
            for n in 1..=4usize {
                let mut delta = 0.0f64;
                for x in 0..r.num_inputs() {
                    for y in 0..r.num_inputs() {
                        let mut d1 = vec![y; n - 1];
                        d1.push(x);
                        let d2 = vec![y; n];
                        delta = delta
                            .max(exact_shuffle_divergence(r, &d1, &d2, eps).unwrap())
                            .max(exact_shuffle_divergence(r, &d2, &d1, eps).unwrap());
                    }
                }
                let rep = pseudo_local_check(r, n, eps, delta).unwrap();
                pass_c &= rep.passes;
                checked += 1;
            }
        }
    }

    CheckOutcome {
        label: "dominated machinery",
        pass: pass_a && pass_b && pass_c,
        summary: format!(
            "eps* <= exact ratio bound on 100 random randomizers (max slack {worst_slack:.3}); \
             averaged-KL lhs <= rhs on 100 dominated instances (min margin {min_margin:.3e}); \
             pseudo-local inequality holds on {checked}/{checked} small instances"
        ),
    }
}

// ---------------------------------------------------------------------------
// 10. Hockey-stick product identity and lower-bound constant
// ---------------------------------------------------------------------------

/// (a) The product identity d_ε(Ber(α)⊛N ‖ Ber(β)⊛N) =
/// (α − e^ε β)·d_{ln τ}(1+N ‖ N), N = Bin(m, β),
/// τ = (e^ε − e^ε β − 1 + α)/(α − e^ε β), to 1e−10 on a 1000-point grid.
/// (b) The explicit-constant lower bound Δ/(2√(2m))·e^{−c₀·E}: c₀ is fitted
/// as the sup over a pinned calibration grid (including the corner where the
/// precondition 4(e^ε/Δ)β < ½ is nearly tight, which drives the fit) and
/// validated on a disjoint, strictly interior grid: exact ≥ bound everywhere.
pub fn hs_identity_and_constant() -> CheckOutcome {
    // (a) identity grid: 8 × 5 × 5 × 5 = 1000 points, all with α > e^ε β.
    let mut max_dev = 0.0f64;
    for m in [1u64, 2, 3, 5, 8, 13, 21, 34] {
        for alpha in [0.3f64, 0.5, 0.7, 0.9, 0.97] {
            for beta in [0.001f64, 0.005, 0.02, 0.05, 0.1] {
                for eps in [0.0f64, 0.1, 0.3, 0.5, 1.0] {
                    let grow = eps.exp();
                    assert!(alpha > grow * beta, "identity grid must satisfy alpha > e^eps*beta");
                    let lhs = hs_exact(m, alpha, beta, eps).unwrap();
                    let tau = (grow - grow * beta - 1.0 + alpha) / (alpha - grow * beta);
                    let n_pmf = pmf_of(&DistSpec::Binomial { n: m, p: beta }, 1e-15).unwrap();
                    let rhs =
                        (alpha - grow * beta) * hockey_stick(&n_pmf.shifted(1), &n_pmf, tau.ln()).0;
                    max_dev = max_dev.max((lhs - rhs).abs());
                }
            }
        }
    }
    let pass_identity = max_dev <= 1e-10;

    // (b) fit c₀ on the calibration grid …
    let sup_over = |ms: &[u64], alphas: &[f64], betas: &[f64], epss: &[f64]| -> (f64, u32) {
        let mut sup = 0.0f64;
        let mut used = 0u32;
        for &m in ms {
            for &alpha in alphas {
                for &beta in betas {
                    for &eps in epss {
                        let grow = eps.exp();
                        let gap = alpha - grow * beta;
                        if gap <= 0.0 || 4.0 * (grow / gap) * beta >= 0.5 {
                            continue;
                        }
                        used += 1;
                        let exact = hs_exact(m, alpha, beta, eps).unwrap();
                        let pref = gap / (2.0 * (2.0 * m as f64).sqrt());
                        let e = m as f64 * (grow / gap) * beta * ((1.0 / gap).ln() + 1.0);
                        if pref > exact {
                            sup = sup.max((pref / exact).ln() / e);
                        }
                    }
                }
            }
        }
        (sup, used)
    };
    let (c0_a, used_a) = sup_over(
        &[1, 2, 4, 8, 16, 32, 64],
        &[0.4, 0.6, 0.8, 0.95],
        &[0.0005, 0.002, 0.008],
        &[0.0, 0.2, 0.5],
    );
    let (c0_b, used_b) = sup_over(
        &[128, 256, 512, 1024, 2048, 4096],
        &[0.5, 0.8, 0.95],
        &[0.002, 0.01, 0.04, 0.1],
        &[0.0, 0.3, 1.0],
    );
    let c0 = c0_a.max(c0_b);

    // … and validate exact ≥ bound on a disjoint interior grid.
    let mut pass_valid = true;
    let mut validated = 0u32;
    let mut min_ratio = f64::INFINITY;
    for m in [3u64, 6, 12, 24, 48, 96, 192, 384, 768, 1536, 3072] {
        for alpha in [0.55f64, 0.75, 0.9] {
            for beta in [0.001f64, 0.004, 0.016, 0.064] {
                for eps in [0.1f64, 0.4, 0.8] {
                    let grow = eps.exp();
                    let gap = alpha - grow * beta;
                    if gap <= 0.0 || 4.0 * (grow / gap) * beta >= 0.5 {
                        continue;
                    }
                    validated += 1;
                    let exact = hs_exact(m, alpha, beta, eps).unwrap();
                    let bound = hs_lower_bound(m, alpha, beta, eps, c0).unwrap();
                    pass_valid &= exact >= bound;
                    min_ratio = min_ratio.min(exact / bound);
                }
            }
        }
    }

    CheckOutcome {
        label: "hockey-stick identity + constant",
        pass: pass_identity && pass_valid,
        summary: format!(
            "identity max deviation {max_dev:.2e} over 1000 grid points (tol 1e-10); \
             c0 = {c0:.4} fitted on {} points, exact >= bound on all {validated} disjoint \
             validation points (min exact/bound = {min_ratio:.3})",
            used_a + used_b
        ),
    }
}

// ---------------------------------------------------------------------------
// 11. SQ simulation fidelity
// ---------------------------------------------------------------------------

/// Simulating one randomized-response output through the statistical-query
/// oracle (worst-case in-tolerance noise, β = 0.01): over 10⁶ draws the
/// simulated output law must be within 5β + 3σ of the exact R(U) in TV, and
/// the mean oracle-query count must stay within 2e^{ε*}.
pub fn sq_simulation_fidelity() -> CheckOutcome {
    let r = RandomizerMatrix::single_message(vec![vec![0.75, 0.25], vec![0.25, 0.75]]);
    let cert = find_min_domination(&r, 0.0).unwrap();
    let u = vec![0.3f64, 0.7];
    let exact: Vec<f64> = (0..2)
        .map(|z| u[0] * r.rows[0][z] + u[1] * r.rows[1][z])
        .collect();
    let beta = 0.01f64;
    let runs = 1_000_000u64;
    let mut rng = ChaCha20Rng::seed_from_u64(4_242);
    let mut counts = [0u64; 2];
    let mut queries = 0u64;
    for _ in 0..runs {
        let mut oracle = SQOracle::new(u.clone(), NoiseMode::WorstCaseWithinTau).unwrap();
        let (z, q) = simulate_dominated(&r, &cert, beta, &mut oracle, &mut rng).unwrap();
        counts[z] += 1;
        queries += q;
    }
    let tv: f64 = (0..2)
        .map(|z| (counts[z] as f64 / runs as f64 - exact[z]).abs())
        .sum::<f64>()
        / 2.0;
    let sigma: f64 = (0..2)
        .map(|z| (exact[z] * (1.0 - exact[z]) / runs as f64).sqrt())
        .sum::<f64>()
        / 2.0;
    let tv_cap = 5.0 * beta + 3.0 * sigma;
    let mean_queries = queries as f64 / runs as f64;
    let query_cap = 2.0 * cert.epsilon_star.exp();
    CheckOutcome {
        label: "SQ simulation fidelity",
        pass: tv <= tv_cap && mean_queries <= query_cap,
        summary: format!(
            "TV(simulated, exact) = {tv:.5} <= {tv_cap:.5} over 1e6 draws; mean queries \
             {mean_queries:.3} <= 2e^(eps*) = {query_cap:.3}"
        ),
    }
}

// ---------------------------------------------------------------------------
// 12. Private selection success
// ---------------------------------------------------------------------------

/// 100 planted-coordinate trials at D = 64, k = 16, ε = 1, δ = 10⁻⁴ with the
/// planted coordinate at frequency 0.9 and the rest at 0.5 (gap 0.4n), at
/// the calibrated user count. The protocol's own budget constraints cap the
/// user count at ⌊e^{√k}⌋ = 54 and the per-user coordinate sample at
/// m = ⌊k/ln²n⌋ = 1 of 64, so the argmax over one privately-counted random
/// coordinate cannot reliably find the planted one: the success target is
/// structurally out of reach at this parameter point and the check reports
/// the measured rate honestly. The k message budget is a hard assertion.
pub fn selection_success() -> CheckOutcome {
    let params = sel_setup(64, 16, 1.0, 1e-4).unwrap();
    assert!(
        params.m * params.shares <= params.k,
        "message budget exceeded: m*shares = {} > k = {}",
        params.m * params.shares,
        params.k
    );
    let mut wins = 0u32;
    for t in 0..100u64 {
        if sel_planted_run(&params, 13, 0.9, 0.5, 20_000 + t).unwrap() == 13 {
            wins += 1;
        }
    }
    CheckOutcome {
        label: "private selection",
        pass: wins >= 90,
        summary: format!(
            "correct coordinate in {wins}/100 trials at calibrated n = {} (budget caps: \
             n <= floor(e^sqrt(k)) = 54, sampled coordinates m = {} of {}; a 0.4n gap on one \
             random coordinate is observed in ~m/D of trials); per-user messages \
             {}*{} <= k = {} held in every trial",
            params.n, params.m, params.d, params.m, params.shares, params.k
        ),
    }
}

// ---------------------------------------------------------------------------
// 13. Divergence-oracle agreement
// ---------------------------------------------------------------------------

/// An independent brute-force transcript law: enumerate every ordered
/// assignment of message tuples to users (depth-first over users), rather
/// than convolving per-user laws into running histograms.
fn law_by_enumeration(r: &RandomizerMatrix, inputs: &[usize]) -> BTreeMap<Vec<u32>, f64> {
    let mut acc: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    let mut stack = vec![(0usize, vec![0u32; r.alphabet], 1.0f64)];
    while let Some((i, hist, pr)) = stack.pop() {
        if i == inputs.len() {
            *acc.entry(hist).or_insert(0.0) += pr;
            continue;
        }
        for t in 0..r.tuple_count() {
            let p = r.rows[inputs[i]][t];
            if p == 0.0 {
                continue;
            }
            let mut h = hist.clone();
            for m in r.decode_tuple(t) {
                h[m] += 1;
            }
            stack.push((i + 1, h, pr * p));
        }
    }
    acc
}

fn hs_between_laws(p: &BTreeMap<Vec<u32>, f64>, q: &BTreeMap<Vec<u32>, f64>, eps: f64) -> f64 {
    let grow = eps.exp();
    let mut acc = Kahan::new();
    for (h, &pv) in p {
        let qv = q.get(h).copied().unwrap_or(0.0);
        let gap = pv - grow * qv;
        if gap > 0.0 {
            acc.add(gap);
        }
    }
    acc.value()
}

/// The exact shuffle-divergence oracle must agree with the independent
/// brute-force enumerator on every dataset pair of size n ≤ 3 over three
/// fixed randomizers, at ε ∈ {0, 0.5} — to a relative 1e-12 (the two sides
/// sum identical terms in different orders).
pub fn divergence_oracle_agreement() -> CheckOutcome {
    let two_message_rows: Vec<Vec<f64>> = (0..2usize)
        .map(|x| {
            let a = [if x == 0 { 0.8 } else { 0.2 }, if x == 0 { 0.2 } else { 0.8 }];
            let b = [if x == 0 { 0.65 } else { 0.35 }, if x == 0 { 0.35 } else { 0.65 }];
            (0..4).map(|t| a[t % 2] * b[t / 2]).collect()
        })
        .collect();
    let matrices = vec![
        RandomizerMatrix::single_message(vec![vec![0.75, 0.25], vec![0.25, 0.75]]),
        RandomizerMatrix::single_message(vec![
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.25, 0.25, 0.5],
        ]),
        RandomizerMatrix {
            alphabet: 2,
            arity: 2,
            rows: two_message_rows,
        },
    ];
    let mut compared = 0u64;
    let mut max_law_dev = 0.0f64;
    let mut max_div_dev = 0.0f64;
    for r in &matrices {
        let k = r.num_inputs();
        for n in 1..=3usize {
            let vectors: Vec<Vec<usize>> = (0..k.pow(n as u32))
                .map(|code| {
                    let mut c = code;
                    (0..n)
                        .map(|_| {
                            let x = c % k;
                            c /= k;
                            x
                        })
                        .collect()
                })
                .collect();
            let laws: Vec<BTreeMap<Vec<u32>, f64>> = vectors
                .iter()
                .map(|v| {
                    let dp = hist_distribution(r, v).unwrap();
                    let brute = law_by_enumeration(r, v);
                    assert_eq!(
                        dp.len(),
                        brute.len(),
                        "law supports differ for inputs {v:?}"
                    );
                    for (h, &pv) in &dp {
                        let bv = brute.get(h).copied().unwrap_or(f64::NAN);
                        max_law_dev = max_law_dev.max((pv - bv).abs());
                    }
                    brute
                })
                .collect();
            for (i, d1) in vectors.iter().enumerate() {
                for (j, d2) in vectors.iter().enumerate() {
                    for eps in [0.0f64, 0.5] {
                        let oracle = exact_shuffle_divergence(r, d1, d2, eps).unwrap();
                        let brute = hs_between_laws(&laws[i], &laws[j], eps);
                        max_div_dev = max_div_dev.max((oracle - brute).abs());
                        compared += 1;
                    }
                }
            }
        }
    }
    CheckOutcome {
        label: "divergence oracle agreement",
        pass: max_law_dev <= 1e-12 && max_div_dev <= 1e-12,
        summary: format!(
            "{compared} divergence comparisons over all n <= 3 dataset pairs of 3 randomizers: \
             max law deviation {max_law_dev:.2e}, max divergence deviation {max_div_dev:.2e} \
             (tol 1e-12)"
        ),
    }
}

/// Every check in suite order.
pub fn all_checks() -> Vec<fn() -> CheckOutcome> {
    vec![
        parity_identity,
        privacy_audit,
        estimator_accuracy,
        message_complexity,
        weak_local_protocol,
        moment_matching_gap,
        poisson_mixture_tv,
        parity_mixture_distinct,
        dominated_machinery,
        hs_identity_and_constant,
        sq_simulation_fidelity,
        selection_success,
        divergence_oracle_agreement,
    ]
}
