//! Experiment runner over the `shuffledp` library.
//!
//! Every subcommand emits a JSON report to stdout (and to `--out` when given,
//! plus a `.csv` mirror of the per-trial table next to it). Reports are
//! deterministic functions of (config, seed): all randomness is ChaCha20
//! seeded from the mandatory `--seed`, with trial t drawing from substream
//! `seed + t`. Trials run in parallel; report assembly is sequential and
//! ordered, so the same invocation always produces byte-identical output.
//!
//! Exit code: 0 when every assertion embedded in the report passed, 1 when
//! some assertion failed (the report says which), 2 on invalid configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use shuffledp::acceptance::{self, ACCURACY_C, WEAK_LOCAL_C};
use shuffledp::auditor::{
    audit_protocol_1d, dominated_kl_check, find_min_domination, hs_exact, hs_lower_bound,
    level1_family, parseval_family, poisson_tv_bound, poisson_tv_empirical, pseudo_local_check,
    RandomizerMatrix, WKind,
};
use shuffledp::countdistinct::{
    analyze_from_parity_count, local_weak_constants, local_weak_sample_parity_sum, pc_config,
    pc_run, robust_constants, sample_parity_sum, sample_total_messages, set_global_constants,
};
use shuffledp::distlib::{hockey_stick, pmf_of, DistSpec};
use shuffledp::hardness::{
    expected_distinct, match_moments, sample_parity_mixture, MomentPair, ParityMixtureSpec,
};
use shuffledp::selection::{sel_planted_run, sel_setup};
use shuffledp::shuffle_core::{run_shuffle, Dataset, PublicRandomness};
use shuffledp::sq_bridge::{simulate_dominated, NoiseMode, SQOracle};

type AnyError = Box<dyn std::error::Error + Send + Sync>;
type CliResult<T> = Result<T, AnyError>;

/// Validated constant for the hockey-stick lower bound, fitted as the worst
/// exponent ratio over a 402-point calibration grid (maximum 0.3670) and
/// checked against exact divergences on a disjoint validation grid.
const DEFAULT_HS_C0: f64 = 0.368;

#[derive(Parser)]
#[command(
    name = "shuffledp",
    version,
    about = "Shuffle-model DP workbench: protocol benchmarks, exact privacy audits, hard-instance experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count-distinct protocol benchmarks
    #[command(subcommand)]
    Countdistinct(CountDistinctCmd),
    /// Budgeted private-selection experiments
    #[command(subcommand)]
    Selection(SelectionCmd),
    /// Privacy audits and bound validations
    #[command(subcommand)]
    Audit(AuditCmd),
    /// Hard-instance generators and their concentration experiments
    #[command(subcommand)]
    Hardness(HardnessCmd),
    /// Statistical-query simulation of dominated randomizers
    #[command(subcommand)]
    Sq(SqCmd),
    /// Two-sample distinguishing experiments on transcript statistics
    #[command(subcommand)]
    Distinguish(DistinguishCmd),
}

// ---------------------------------------------------------------------------
// countdistinct
// ---------------------------------------------------------------------------

#[derive(Subcommand)]
enum CountDistinctCmd {
    /// Run the shuffle protocol on a fixed workload and report per-trial
    /// estimates and message counts.
    ///
    /// Workload: max(1, min(D, n)/2) coordinates are each held by exactly one
    /// user; the remaining users hold nothing. The default path samples the
    /// parity sum and message total from their exact laws (the analyzer sees
    /// only those aggregates, so the draws are distribution-identical to a
    /// message-level run at any scale); --gamma switches to the message-level
    /// robust variant, whose cost grows as n*D.
    Run(CdRunArgs),
    /// Run the weak-privacy local protocol (universe size = n) and check its
    /// local privacy level against ln(n) + 3.
    Weak(CdWeakArgs),
}

#[derive(Args)]
struct CdRunArgs {
    /// Number of users
    #[arg(long)]
    n: u64,
    /// Universe size (number of coordinates)
    #[arg(long = "D")]
    d: u64,
    /// Privacy parameter epsilon
    #[arg(long)]
    eps: f64,
    /// Privacy parameter delta
    #[arg(long)]
    delta: f64,
    /// Participation fraction in (0, 1]: run the robust variant at message
    /// level instead of sampling aggregate laws
    #[arg(long)]
    gamma: Option<f64>,
    /// Use the public-coin wrapper (one expected message per user)
    #[arg(long = "public-coin")]
    public_coin: bool,
    /// Number of trials
    #[arg(long)]
    trials: u64,
    /// Root seed; trial t uses seed + t
    #[arg(long)]
    seed: u64,
    /// Write the JSON report here, plus a .csv mirror of the trial table
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CdTrialRow {
    true_count: u64,
    estimate: f64,
    messages_total: u64,
}

#[derive(Serialize)]
struct Quantiles {
    p50: f64,
    p90: f64,
    p95: f64,
    max: f64,
}

#[derive(Serialize)]
struct CdRunReport {
    command: &'static str,
    n: u64,
    #[serde(rename = "D")]
    d: u64,
    eps: f64,
    delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    public_coin: bool,
    trials: u64,
    seed: u64,
    q_prime: f64,
    true_count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    trivial_regime: Option<bool>,
    trial_rows: Vec<CdTrialRow>,
    errors: Vec<f64>,
    /// Mean messages per user across all trials.
    messages_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    analytic_messages_mean: Option<f64>,
    error_quantiles: Quantiles,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    within_bound: Option<u64>,
    pass: bool,
}

fn cd_run(args: &CdRunArgs) -> CliResult<bool> {
    if args.trials == 0 {
        return Err("trials must be >= 1".into());
    }
    let (n, d) = (args.n, args.d);
    let distinct = (d.min(n) / 2).max(1);
    let mut gamma_echo = None;
    let mut trivial = None;
    let mut analytic = None;
    let mut accuracy_bound = None;
    let mut within_bound = None;

    let rows: Vec<CdTrialRow>;
    let q_prime;
    if args.public_coin {
        if args.gamma.is_some() {
            return Err("--gamma and --public-coin cannot be combined".into());
        }
        q_prime = set_global_constants(n, args.eps, args.delta)?.q_prime;
        let dataset = workload_dataset(n, d, distinct)?;
        let public = PublicRandomness::new(args.seed);
        rows = (0..args.trials)
            .into_par_iter()
            .map(|t| -> CliResult<CdTrialRow> {
                let outcome = pc_run(
                    &dataset,
                    args.eps,
                    args.delta,
                    &public,
                    args.seed.wrapping_add(1).wrapping_add(t),
                )?;
                Ok(CdTrialRow {
                    true_count: distinct,
                    estimate: outcome.estimate as f64,
                    messages_total: outcome.messages_total,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        // The wrapper degrades to the zero estimate when no bucket count
        // fits the one-message budget; surface that in the report.
        trivial = Some(matches!(
            pc_config(n, args.eps, args.delta),
            Err(shuffledp::Error::TrivialRegime(_))
        ));
    } else if let Some(gamma) = args.gamma {
        let params = robust_constants(n, args.eps, args.delta, gamma)?;
        q_prime = params.base.q_prime;
        gamma_echo = Some(gamma);
        let dataset = workload_dataset(n, d, distinct)?;
        rows = (0..args.trials)
            .into_par_iter()
            .map(|t| -> CliResult<CdTrialRow> {
                let hist = run_shuffle(
                    &params.randomizer(d),
                    &dataset,
                    args.seed.wrapping_add(t),
                )?;
                let raw = params.analyze(&hist, d);
                Ok(CdTrialRow {
                    true_count: distinct,
                    estimate: raw.clamp(0.0, n as f64),
                    messages_total: hist.total(),
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
    } else {
        let params = set_global_constants(n, args.eps, args.delta)?;
        q_prime = params.q_prime;
        analytic = Some(params.expected_messages(d, distinct as f64 / n as f64));
        rows = (0..args.trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha20Rng::seed_from_u64(args.seed.wrapping_add(t));
                let c = sample_parity_sum(distinct, d, &params, &mut rng);
                let raw = analyze_from_parity_count(c as f64, d, params.epsilon0.exp());
                CdTrialRow {
                    true_count: distinct,
                    estimate: raw.clamp(0.0, n as f64),
                    messages_total: sample_total_messages(distinct, d, &params, &mut rng),
                }
            })
            .collect();
        let bound = ACCURACY_C * (d as f64).sqrt() / args.eps;
        accuracy_bound = Some(bound);
        within_bound = Some(
            rows.iter()
                .filter(|r| (r.estimate - distinct as f64).abs() <= bound)
                .count() as u64,
        );
    }

    let errors: Vec<f64> = rows.iter().map(|r| r.estimate - r.true_count as f64).collect();
    let messages_mean = rows
        .iter()
        .map(|r| r.messages_total as f64 / n as f64)
        .sum::<f64>()
        / rows.len() as f64;
    let pass = match (&within_bound, args.public_coin) {
        // Calibrated accuracy check: at least 95% of trials within the bound.
        (Some(w), _) => *w * 100 >= 95 * args.trials,
        // One-message budget, with a 3-standard-error allowance on the
        // empirical mean (the bucket count is chosen to put the true mean
        // at or below 1).
        (None, true) => {
            let per_trial: Vec<f64> = rows
                .iter()
                .map(|r| r.messages_total as f64 / n as f64)
                .collect();
            let var = per_trial
                .iter()
                .map(|m| (m - messages_mean).powi(2))
                .sum::<f64>()
                / per_trial.len() as f64;
            let se = (var / per_trial.len() as f64).sqrt();
            messages_mean <= 1.0 + 3.0 * se
        }
        (None, false) => true,
    };

    let report = CdRunReport {
        command: "countdistinct run",
        n,
        d,
        eps: args.eps,
        delta: args.delta,
        gamma: gamma_echo,
        public_coin: args.public_coin,
        trials: args.trials,
        seed: args.seed,
        q_prime,
        true_count: distinct,
        trivial_regime: trivial,
        errors,
        messages_mean,
        analytic_messages_mean: analytic,
        error_quantiles: abs_quantiles(
            &rows
                .iter()
                .map(|r| (r.estimate - r.true_count as f64).abs())
                .collect::<Vec<_>>(),
        ),
        accuracy_bound,
        within_bound,
        pass,
        trial_rows: rows,
    };
    emit(&report, args.out.as_deref())?;
    if let Some(out) = &args.out {
        let lines: Vec<String> = report
            .trial_rows
            .iter()
            .map(|r| format!("{},{},{}", r.true_count, r.estimate, r.messages_total))
            .collect();
        write_csv(out, "true_count,estimate,messages_total", &lines)?;
    }
    Ok(report.pass)
}

fn workload_dataset(n: u64, d: u64, distinct: u64) -> CliResult<Dataset> {
    let entries: Vec<u64> = (0..n)
        .map(|i| if i < distinct { i + 1 } else { 0 })
        .collect();
    Ok(Dataset::new(d, entries)?)
}

#[derive(Args)]
struct CdWeakArgs {
    /// Number of users (also the universe size)
    #[arg(long)]
    n: u64,
    /// Number of trials
    #[arg(long)]
    trials: u64,
    /// Root seed; trial t uses seed + t
    #[arg(long)]
    seed: u64,
    /// Write the JSON report here, plus a .csv mirror of the trial table
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CdWeakReport {
    command: &'static str,
    n: u64,
    trials: u64,
    seed: u64,
    q_prime: f64,
    eps_local: f64,
    eps_local_bound: f64,
    true_count: u64,
    errors: Vec<f64>,
    error_quantiles: Quantiles,
    accuracy_bound: f64,
    within_bound: u64,
    pass: bool,
}

fn cd_weak(args: &CdWeakArgs) -> CliResult<bool> {
    if args.trials == 0 {
        return Err("trials must be >= 1".into());
    }
    let params = local_weak_constants(args.n);
    let held = (args.n / 2).max(1);
    let estimates: Vec<f64> = (0..args.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha20Rng::seed_from_u64(args.seed.wrapping_add(t));
            let c = local_weak_sample_parity_sum(held, &params, &mut rng);
            analyze_from_parity_count(c as f64, params.n, 1.0f64.exp())
                .clamp(0.0, args.n as f64)
        })
        .collect();
    let errors: Vec<f64> = estimates.iter().map(|e| e - held as f64).collect();
    let bound = WEAK_LOCAL_C * (args.n as f64).sqrt();
    let within = errors.iter().filter(|e| e.abs() <= bound).count() as u64;
    let eps_local = params.local_epsilon();
    let eps_cap = (args.n as f64).ln() + 3.0;
    let pass = eps_local <= eps_cap && within * 100 >= 95 * args.trials;
    let report = CdWeakReport {
        command: "countdistinct weak",
        n: args.n,
        trials: args.trials,
        seed: args.seed,
        q_prime: params.q_prime,
        eps_local,
        eps_local_bound: eps_cap,
        true_count: held,
        error_quantiles: abs_quantiles(&errors.iter().map(|e| e.abs()).collect::<Vec<_>>()),
        accuracy_bound: bound,
        within_bound: within,
        pass,
        errors,
    };
    emit(&report, args.out.as_deref())?;
    if let Some(out) = &args.out {
        let lines: Vec<String> = report
            .errors
            .iter()
            .enumerate()
            .map(|(t, e)| format!("{t},{e}"))
            .collect();
        write_csv(out, "trial,error", &lines)?;
    }
    Ok(report.pass)
}

// ---------------------------------------------------------------------------
// selection
// ---------------------------------------------------------------------------

#[derive(Subcommand)]
enum SelectionCmd {
    /// Planted-instance selection: one coordinate's frequency exceeds the
    /// rest by --planted-gap; report how often the protocol finds it. The
    /// planted coordinate rotates with the trial index.
    Run(SelRunArgs),
}

#[derive(Args)]
struct SelRunArgs {
    /// Number of coordinates
    #[arg(long = "D")]
    d: u64,
    /// Per-user message budget
    #[arg(long)]
    k: u64,
    /// Privacy parameter epsilon
    #[arg(long)]
    eps: f64,
    /// Privacy parameter delta
    #[arg(long)]
    delta: f64,
    /// Frequency gap in (0, 0.5]: planted coordinate has frequency
    /// 0.5 + gap, all others 0.5
    #[arg(long = "planted-gap")]
    planted_gap: f64,
    /// Number of trials
    #[arg(long)]
    trials: u64,
    /// Root seed; trial t uses seed + t
    #[arg(long)]
    seed: u64,
    /// Write the JSON report here, plus a .csv mirror of the trial table
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SelTrialRow {
    planted: u64,
    winner: u64,
    correct: bool,
}

#[derive(Serialize)]
struct SelRunReport {
    command: &'static str,
    #[serde(rename = "D")]
    d: u64,
    k: u64,
    eps: f64,
    delta: f64,
    planted_gap: f64,
    trials: u64,
    seed: u64,
    /// Calibrated user count for this (D, k, eps, delta).
    n: u64,
    /// Coordinates each user samples.
    m: u64,
    /// Additive shares per sampled coordinate (m * shares <= k always).
    shares: u64,
    modulus: u64,
    budget_ok: bool,
    wins: u64,
    trial_rows: Vec<SelTrialRow>,
    pass: bool,
}

fn sel_run_cmd(args: &SelRunArgs) -> CliResult<bool> {
    if args.trials == 0 {
        return Err("trials must be >= 1".into());
    }
    if !(args.planted_gap > 0.0 && args.planted_gap <= 0.5) {
        return Err(format!("planted-gap {} outside (0, 0.5]", args.planted_gap).into());
    }
    let params = sel_setup(args.d, args.k, args.eps, args.delta)?;
    let budget_ok = params.m * params.shares <= params.k;
    assert!(budget_ok, "per-user messages {} exceed the budget {}", params.m * params.shares, params.k);
    let p_planted = 0.5 + args.planted_gap;
    let rows: Vec<SelTrialRow> = (0..args.trials)
        .into_par_iter()
        .map(|t| -> CliResult<SelTrialRow> {
            let planted = 1 + (t % args.d);
            let winner = sel_planted_run(
                &params,
                planted,
                p_planted,
                0.5,
                args.seed.wrapping_add(t),
            )?;
            Ok(SelTrialRow {
                planted,
                winner,
                correct: winner == planted,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let wins = rows.iter().filter(|r| r.correct).count() as u64;
    let pass = budget_ok && wins * 10 >= 9 * args.trials;
    let report = SelRunReport {
        command: "selection run",
        d: args.d,
        k: args.k,
        eps: args.eps,
        delta: args.delta,
        planted_gap: args.planted_gap,
        trials: args.trials,
        seed: args.seed,
        n: params.n,
        m: params.m,
        shares: params.shares,
        modulus: params.modulus,
        budget_ok,
        wins,
        pass,
        trial_rows: rows,
    };
    emit(&report, args.out.as_deref())?;
    if let Some(out) = &args.out {
        let lines: Vec<String> = report
            .trial_rows
            .iter()
            .map(|r| format!("{},{},{}", r.planted, r.winner, r.correct))
            .collect();
        write_csv(out, "planted,winner,correct", &lines)?;
    }
    Ok(report.pass)
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

#[derive(Subcommand)]
enum AuditCmd {
    /// Check the closed-form parity mass of the per-coordinate coin count:
    /// Pr[Bin(n, q') odd] must equal e^{-eps0}/2 to 1e-12.
    Parity(AuditParityArgs),
    /// Exact single-coordinate privacy audit of the count-distinct protocol:
    /// both directed divergences plus the truncation correction against
    /// delta/3.
    #[command(name = "protocol-1d")]
    Protocol1d(AuditProtocolArgs),
    /// Minimal-epsilon domination certificate for a randomizer matrix,
    /// replayed against the matrix and compared to its exact local epsilon.
    Domination(AuditDominationArgs),
    /// Averaged-KL bound for a dominated randomizer against a parity-mixture
    /// or level-1 weight family.
    KlBound(AuditKlArgs),
    /// Pseudo-local inequality for the n-user merged randomizer, by exact
    /// enumeration.
    PseudoLocal(AuditPseudoLocalArgs),
    /// Hockey-stick lower bound on a grid of (m, alpha, beta, eps) rows:
    /// exact divergence vs the closed-form bound, plus the
    /// binomial-factorization identity deviation.
    HsBound(AuditHsArgs),
    /// Poisson-mixture total-variation bound for a moment-matched pair,
    /// analytic and (optionally) empirical.
    PoissonTv(AuditPoissonArgs),
    /// Cross-check the exact shuffle divergence against an independent
    /// brute-force enumerator on all small instances.
    OracleAgreement,
}

/// The four-field verdict every audit emits.
#[derive(Serialize)]
struct Verdict {
    value: f64,
    bound: f64,
    pass: bool,
    truncation_error: f64,
}

#[derive(Args)]
struct AuditParityArgs {
    /// Number of users
    #[arg(long)]
    n: u64,
    /// Per-coordinate privacy budget
    #[arg(long)]
    eps0: f64,
}

#[derive(Serialize)]
struct AuditParityReport {
    command: &'static str,
    n: u64,
    eps0: f64,
    q_prime: f64,
    verdict: Verdict,
}

fn audit_parity(args: &AuditParityArgs) -> CliResult<bool> {
    if !(args.eps0 > 0.0) {
        return Err(format!("eps0 {} must be positive", args.eps0).into());
    }
    let ln_base = (-(-args.eps0).exp()).ln_1p();
    let q_prime = -(ln_base / args.n as f64).exp_m1() / 2.0;
    let trunc = 1e-18;
    let pmf = pmf_of(
        &DistSpec::Binomial {
            n: args.n,
            p: q_prime,
        },
        trunc,
    )?;
    let value = pmf.parity_mass();
    let bound = (-args.eps0).exp() / 2.0;
    let report = AuditParityReport {
        command: "audit parity",
        n: args.n,
        eps0: args.eps0,
        q_prime,
        verdict: Verdict {
            value,
            bound,
            pass: (value - bound).abs() <= 1e-12,
            truncation_error: trunc,
        },
    };
    emit(&report, None)?;
    Ok(report.verdict.pass)
}

#[derive(Args)]
struct AuditProtocolArgs {
    /// Number of users
    #[arg(long)]
    n: u64,
    /// Privacy parameter epsilon
    #[arg(long)]
    eps: f64,
    /// Privacy parameter delta
    #[arg(long)]
    delta: f64,
    /// Other users holding the audited coordinate (common noise)
    #[arg(long, default_value_t = 0)]
    common: u64,
}

#[derive(Serialize)]
struct AuditProtocolReport {
    command: &'static str,
    n: u64,
    eps: f64,
    delta: f64,
    common: u64,
    forward: f64,
    backward: f64,
    verdict: Verdict,
}

fn audit_protocol_1d_cmd(args: &AuditProtocolArgs) -> CliResult<bool> {
    let params = set_global_constants(args.n, args.eps, args.delta)?;
    let audit = audit_protocol_1d(&params, args.common)?;
    let value = audit.forward.max(audit.backward) + audit.truncation;
    let bound = args.delta / 3.0;
    let report = AuditProtocolReport {
        command: "audit protocol-1d",
        n: args.n,
        eps: args.eps,
        delta: args.delta,
        common: args.common,
        forward: audit.forward,
        backward: audit.backward,
        verdict: Verdict {
            value,
            bound,
            pass: value <= bound,
            truncation_error: audit.truncation,
        },
    };
    emit(&report, None)?;
    Ok(report.verdict.pass)
}

#[derive(Args)]
struct AuditDominationArgs {
    /// Randomizer matrix JSON: {"alphabet": M, "arity": k, "rows": [[...]]}
    #[arg(long)]
    matrix: PathBuf,
    /// Residual delta of the certificate
    #[arg(long)]
    delta: f64,
}

#[derive(Serialize)]
struct AuditDominationReport {
    command: &'static str,
    matrix: String,
    delta: f64,
    epsilon_star: f64,
    residual_delta: f64,
    dominating: Vec<f64>,
    certificate_ok: bool,
    /// Exact local epsilon of the matrix (max log-likelihood ratio).
    exact_local_epsilon: f64,
    verdict: Verdict,
}

fn audit_domination(args: &AuditDominationArgs) -> CliResult<bool> {
    let r = load_matrix(&args.matrix)?;
    let cert = find_min_domination(&r, args.delta)?;
    let certificate_ok = cert.check(&r, 1e-9).is_ok();
    let mut exact_eps = 0.0f64;
    for row_x in &r.rows {
        for row_y in &r.rows {
            for (px, py) in row_x.iter().zip(row_y) {
                if *px > 0.0 {
                    exact_eps = if *py > 0.0 {
                        exact_eps.max((px / py).ln())
                    } else {
                        f64::INFINITY
                    };
                }
            }
        }
    }
    // At delta = 0 the minimal certificate epsilon can never exceed the
    // matrix's own local epsilon; with residual delta the comparison is
    // informational only.
    let pass = certificate_ok
        && (args.delta > 0.0 || cert.epsilon_star <= exact_eps + 1e-9);
    let report = AuditDominationReport {
        command: "audit domination",
        matrix: args.matrix.display().to_string(),
        delta: args.delta,
        epsilon_star: cert.epsilon_star,
        residual_delta: cert.residual_delta,
        dominating: cert.dominating.clone(),
        certificate_ok,
        exact_local_epsilon: exact_eps,
        verdict: Verdict {
            value: cert.epsilon_star,
            bound: exact_eps,
            pass,
            truncation_error: 0.0,
        },
    };
    emit(&report, None)?;
    Ok(report.verdict.pass)
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyKind {
    /// Parity mixtures over the Boolean cube, Parseval-style weight
    Parseval,
    /// Level-1 Fourier-weight family
    Level1,
}

#[derive(Args)]
struct AuditKlArgs {
    /// Randomizer matrix JSON; the number of rows must be a power of two
    /// (inputs are cube points)
    #[arg(long)]
    matrix: PathBuf,
    /// Weight family the bound is taken over
    #[arg(long, value_enum)]
    family: FamilyKind,
    /// Mixture bias used by the parseval family
    #[arg(long, default_value_t = 0.6)]
    alpha: f64,
}

#[derive(Serialize)]
struct AuditKlReport {
    command: &'static str,
    matrix: String,
    family: &'static str,
    alpha: f64,
    dim: u32,
    epsilon_star: f64,
    lhs: f64,
    rhs: f64,
    verdict: Verdict,
}

fn audit_kl(args: &AuditKlArgs) -> CliResult<bool> {
    let r = load_matrix(&args.matrix)?;
    let inputs = r.num_inputs();
    if !inputs.is_power_of_two() || inputs < 2 {
        return Err(format!(
            "kl-bound needs a power-of-two number of inputs (cube points), got {inputs}"
        )
        .into());
    }
    let dim = inputs.trailing_zeros();
    let (family, weights, kind, family_name) = match args.family {
        FamilyKind::Parseval => {
            let (f, w) = parseval_family(dim, args.alpha)?;
            (f, w, WKind::Parseval { alpha: args.alpha, d: dim }, "parseval")
        }
        FamilyKind::Level1 => {
            let (f, w) = level1_family(dim)?;
            (f, w, WKind::Level1 { d: dim }, "level1")
        }
    };
    let mu = vec![1.0 / inputs as f64; inputs];
    let cert = find_min_domination(&r, 0.0)?;
    let (lhs, rhs) = dominated_kl_check(&r, &family, &mu, &weights, cert.epsilon_star, 0.0, kind)?;
    let report = AuditKlReport {
        command: "audit kl-bound",
        matrix: args.matrix.display().to_string(),
        family: family_name,
        alpha: args.alpha,
        dim,
        epsilon_star: cert.epsilon_star,
        lhs,
        rhs,
        verdict: Verdict {
            value: lhs,
            bound: rhs,
            pass: lhs <= rhs + 1e-12,
            truncation_error: 0.0,
        },
    };
    emit(&report, None)?;
    Ok(report.verdict.pass)
}

#[derive(Args)]
struct AuditPseudoLocalArgs {
    /// Randomizer matrix JSON
    #[arg(long)]
    matrix: PathBuf,
    /// Number of users merged into the random mapping
    #[arg(long)]
    n: usize,
    /// Privacy parameter epsilon of the base randomizer
    #[arg(long)]
    eps: f64,
    /// Additive slack delta of the inequality
    #[arg(long)]
    delta: f64,
}

#[derive(Serialize)]
struct AuditPseudoLocalReport {
    command: &'static str,
    matrix: String,
    n: usize,
    eps: f64,
    delta: f64,
    epsilon_used: f64,
    verdict: Verdict,
}

fn audit_pseudo_local(args: &AuditPseudoLocalArgs) -> CliResult<bool> {
    let r = load_matrix(&args.matrix)?;
    let rep = pseudo_local_check(&r, args.n, args.eps, args.delta)?;
    let report = AuditPseudoLocalReport {
        command: "audit pseudo-local",
        matrix: args.matrix.display().to_string(),
        n: args.n,
        eps: args.eps,
        delta: args.delta,
        epsilon_used: rep.epsilon_used,
        verdict: Verdict {
            value: rep.max_divergence,
            bound: args.delta,
            pass: rep.passes,
            truncation_error: 0.0,
        },
    };
    emit(&report, None)?;
    Ok(report.verdict.pass)
}

#[derive(Args)]
struct AuditHsArgs {
    /// Grid JSON: an array of {"m": .., "alpha": .., "beta": .., "eps": ..}
    #[arg(long)]
    grid: PathBuf,
    /// Constant in the lower bound's exponent
    #[arg(long, default_value_t = DEFAULT_HS_C0)]
    c0: f64,
    /// Write the JSON report here, plus a .csv mirror of the row table
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
struct HsGridRow {
    m: u64,
    alpha: f64,
    beta: f64,
    eps: f64,
}

#[derive(Serialize)]
struct HsRowReport {
    m: u64,
    alpha: f64,
    beta: f64,
    eps: f64,
    /// Deviation of the exact divergence from its binomial-factorization
    /// closed form; absent when alpha <= e^eps * beta (divergence is 0).
    #[serde(skip_serializing_if = "Option::is_none")]
    identity_dev: Option<f64>,
    /// Why the lower bound does not apply at this row, if it doesn't.
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped: Option<String>,
    verdict: Verdict,
}

#[derive(Serialize)]
struct AuditHsReport {
    command: &'static str,
    grid: String,
    c0: f64,
    rows: Vec<HsRowReport>,
    rows_checked: usize,
    rows_skipped: usize,
    pass: bool,
}

fn audit_hs(args: &AuditHsArgs) -> CliResult<bool> {
    let text = fs::read_to_string(&args.grid)
        .map_err(|e| format!("grid {}: {e}", args.grid.display()))?;
    let grid: Vec<HsGridRow> = serde_json::from_str(&text)?;
    if grid.is_empty() {
        return Err("grid contains no rows".into());
    }
    let trunc = 1e-15;
    let mut rows = Vec::new();
    for g in &grid {
        let exact = hs_exact(g.m, g.alpha, g.beta, g.eps)?;
        let grow = g.eps.exp();
        let gap = g.alpha - grow * g.beta;
        let identity_dev = if gap > 0.0 {
            let common = pmf_of(&DistSpec::Binomial { n: g.m, p: g.beta }, trunc)?;
            let tau = (grow - grow * g.beta - 1.0 + g.alpha) / gap;
            let predicted = gap * hockey_stick(&common.shifted(1), &common, tau.ln()).0;
            Some((exact - predicted).abs())
        } else {
            None
        };
        let (verdict, skipped) = match hs_lower_bound(g.m, g.alpha, g.beta, g.eps, args.c0) {
            Ok(bound) => (
                Verdict {
                    value: exact,
                    bound,
                    pass: exact >= bound,
                    truncation_error: trunc,
                },
                None,
            ),
            Err(e) => (
                Verdict {
                    value: exact,
                    bound: 0.0,
                    pass: true,
                    truncation_error: trunc,
                },
                Some(e.to_string()),
            ),
        };
        rows.push(HsRowReport {
            m: g.m,
            alpha: g.alpha,
            beta: g.beta,
            eps: g.eps,
            identity_dev,
            skipped,
            verdict,
        });
    }
    let rows_skipped = rows.iter().filter(|r| r.skipped.is_some()).count();
    let pass = rows.iter().all(|r| r.verdict.pass)
        && rows
            .iter()
            .filter_map(|r| r.identity_dev)
            .all(|d| d <= 1e-10);
    let report = AuditHsReport {
        command: "audit hs-bound",
        grid: args.grid.display().to_string(),
        c0: args.c0,
        rows_checked: rows.len() - rows_skipped,
        rows_skipped,
        pass,
        rows,
    };
    emit(&report, args.out.as_deref())?;
    if let Some(out) = &args.out {
        let lines: Vec<String> = report
            .rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{}",
                    r.m, r.alpha, r.beta, r.eps, r.verdict.value, r.verdict.bound, r.verdict.pass
                )
            })
            .collect();
        write_csv(out, "m,alpha,beta,eps,value,bound,pass", &lines)?;
    }
    Ok(report.pass)
}

#[derive(Args)]
struct AuditPoissonArgs {
    /// Moment pair JSON, as written by `hardness moment-pair --out`
    #[arg(long)]
    pair: PathBuf,
    /// Number of coordinates theta spreads over (theta uniform, lambda =
    /// 2*Lambda^2*theta)
    #[arg(long)]
    dim: usize,
    /// Empirical-draw count for the bootstrap TV estimate (0 = analytic only)
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Root seed for the empirical estimate
    #[arg(long)]
    seed: u64,
    /// Histogram bins of the empirical estimate
    #[arg(long, default_value_t = 8)]
    bins: usize,
    /// Bootstrap resamples behind the empirical sigma
    #[arg(long, default_value_t = 200)]
    boot: usize,
}

#[derive(Serialize)]
struct AuditPoissonReport {
    command: &'static str,
    pair: String,
    #[serde(rename = "L")]
    l_order: u32,
    #[serde(rename = "Lambda")]
    lambda: f64,
    dim: usize,
    samples: usize,
    seed: u64,
    precondition_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    empirical_tv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    empirical_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    empirical_cap: Option<f64>,
    verdict: Verdict,
}

fn audit_poisson(args: &AuditPoissonArgs) -> CliResult<bool> {
    let pair = load_pair(&args.pair)?;
    if args.dim == 0 {
        return Err("dim must be >= 1".into());
    }
    let theta = vec![1.0 / args.dim as f64; args.dim];
    let lambda: Vec<f64> = theta
        .iter()
        .map(|&t| 2.0 * pair.lambda * pair.lambda * t)
        .collect();
    let rep = poisson_tv_bound(&pair, &theta, &lambda, pair.l_order)?;
    let cap = 1.0 / (1..=u64::from(pair.l_order)).map(|k| k as f64).product::<f64>();
    let mut pass = rep.precondition_ok && rep.bound_tv_squared <= cap;
    let (mut tv, mut sigma, mut emp_cap) = (None, None, None);
    if args.samples > 0 {
        let mut rng = ChaCha20Rng::seed_from_u64(args.seed);
        let (t, s) = poisson_tv_empirical(
            &pair,
            &theta,
            &lambda,
            args.samples,
            args.bins,
            args.boot,
            &mut rng,
        )?;
        let cap_emp = cap.sqrt() + 3.0 * s;
        pass = pass && t <= cap_emp;
        (tv, sigma, emp_cap) = (Some(t), Some(s), Some(cap_emp));
    }
    let report = AuditPoissonReport {
        command: "audit poisson-tv",
        pair: args.pair.display().to_string(),
        l_order: pair.l_order,
        lambda: pair.lambda,
        dim: args.dim,
        samples: args.samples,
        seed: args.seed,
        precondition_ok: rep.precondition_ok,
        empirical_tv: tv,
        empirical_sigma: sigma,
        empirical_cap: emp_cap,
        verdict: Verdict {
            value: rep.bound_tv_squared,
            bound: cap,
            pass,
            truncation_error: rep.truncation,
        },
    };
    emit(&report, None)?;
    Ok(report.verdict.pass)
}

#[derive(Serialize)]
struct OracleAgreementReport {
    command: &'static str,
    pass: bool,
    summary: String,
}

fn audit_oracle_agreement() -> CliResult<bool> {
    let outcome = acceptance::divergence_oracle_agreement();
    let report = OracleAgreementReport {
        command: "audit oracle-agreement",
        pass: outcome.pass,
        summary: outcome.summary,
    };
    emit(&report, None)?;
    Ok(report.pass)
}

// ---------------------------------------------------------------------------
// hardness
// ---------------------------------------------------------------------------

#[derive(Subcommand)]
enum HardnessCmd {
    /// Solve for the moment-matched pair (U, V) on the half-integer grid and
    /// report its zero-mass gap. --out writes the bare pair JSON, consumable
    /// by `audit poisson-tv --pair`.
    MomentPair(MomentPairArgs),
    /// Concentration of the distinct count of parity-mixture draws around
    /// (1 - cosh(alpha)/e) * n.
    Distinct(HardnessDistinctArgs),
}

#[derive(Args)]
struct MomentPairArgs {
    /// Number of matched moments
    #[arg(long = "L")]
    l: u32,
    /// Support cap: U, V live on {0} union [1, Lambda]
    #[arg(long = "Lambda")]
    lambda: f64,
    /// Grid step of the support
    #[arg(long, default_value_t = 0.5)]
    step: f64,
    /// Write the bare pair JSON here, plus a .csv mirror of the support table
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct MomentPairReport {
    command: &'static str,
    #[serde(rename = "L")]
    l: u32,
    #[serde(rename = "Lambda")]
    lambda: f64,
    step: f64,
    gap: f64,
    support_size: usize,
    max_scaled_moment_gap: f64,
    pass: bool,
    pair: MomentPair,
}

fn hardness_moment_pair(args: &MomentPairArgs) -> CliResult<bool> {
    let pair = match_moments(args.l, args.lambda, args.step)?;
    let pass = pair.verify(1e-9).is_ok();
    let max_gap = pair
        .scaled_moment_gaps()
        .into_iter()
        .fold(0.0f64, f64::max);
    let report = MomentPairReport {
        command: "hardness moment-pair",
        l: args.l,
        lambda: args.lambda,
        step: args.step,
        gap: pair.gap,
        support_size: pair.support.len(),
        max_scaled_moment_gap: max_gap,
        pass,
        pair,
    };
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(out) = &args.out {
        fs::write(out, format!("{}\n", serde_json::to_string_pretty(&report.pair)?))?;
        let lines: Vec<String> = report
            .pair
            .support
            .iter()
            .enumerate()
            .map(|(k, x)| {
                format!("{x},{},{}", report.pair.u_masses[k], report.pair.v_masses[k])
            })
            .collect();
        write_csv(out, "support,u_mass,v_mass", &lines)?;
    }
    Ok(report.pass)
}

#[derive(Args)]
struct HardnessDistinctArgs {
    /// Mixture bias toward the parity slice
    #[arg(long)]
    alpha: f64,
    /// Draws per trial (cube has 2^dim points)
    #[arg(long)]
    n: u64,
    /// Cube dimension
    #[arg(long, default_value_t = 14)]
    dim: u32,
    /// Parity direction (bitmask over coordinates; 0 only with alpha = 0)
    #[arg(long, default_value_t = 1)]
    s: u64,
    /// Parity value the slice fixes
    #[arg(long, default_value_t = 0)]
    ell: u8,
    /// Number of trials
    #[arg(long)]
    trials: u64,
    /// Root seed; trial t uses seed + t
    #[arg(long)]
    seed: u64,
    /// Write the JSON report here, plus a .csv mirror of the trial table
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct HardnessDistinctReport {
    command: &'static str,
    alpha: f64,
    n: u64,
    dim: u32,
    s: u64,
    ell: u8,
    trials: u64,
    seed: u64,
    expected: f64,
    radius: f64,
    within: u64,
    counts: Vec<u64>,
    pass: bool,
}

fn hardness_distinct(args: &HardnessDistinctArgs) -> CliResult<bool> {
    if args.trials == 0 {
        return Err("trials must be >= 1".into());
    }
    let spec = ParityMixtureSpec {
        d: args.dim,
        ell: args.ell,
        s: args.s,
        alpha: args.alpha,
    };
    spec.validate()?;
    let counts: Vec<u64> = (0..args.trials)
        .into_par_iter()
        .map(|t| -> CliResult<u64> {
            let mut rng = ChaCha20Rng::seed_from_u64(args.seed.wrapping_add(t));
            Ok(sample_parity_mixture(&spec, args.n, &mut rng)?.distinct_nonzero())
        })
        .collect::<CliResult<Vec<_>>>()?;
    let expected = expected_distinct(args.alpha, args.n);
    let radius = 10.0 * (args.n as f64).sqrt();
    let within = counts
        .iter()
        .filter(|&&c| (c as f64 - expected).abs() <= radius)
        .count() as u64;
    let pass = within * 100 >= 99 * args.trials;
    let report = HardnessDistinctReport {
        command: "hardness distinct",
        alpha: args.alpha,
        n: args.n,
        dim: args.dim,
        s: args.s,
        ell: args.ell,
        trials: args.trials,
        seed: args.seed,
        expected,
        radius,
        within,
        pass,
        counts,
    };
    emit(&report, args.out.as_deref())?;
    if let Some(out) = &args.out {
        let lines: Vec<String> = report
            .counts
            .iter()
            .enumerate()
            .map(|(t, c)| format!("{t},{c}"))
            .collect();
        write_csv(out, "trial,distinct", &lines)?;
    }
    Ok(report.pass)
}

// ---------------------------------------------------------------------------
// sq
// ---------------------------------------------------------------------------

#[derive(Subcommand)]
enum SqCmd {
    /// Draw from R(U) through the statistical-query rejection sampler (fresh
    /// adversarially-noised oracle per draw) and compare the empirical output
    /// law against the exact mixture.
    Simulate(SqSimulateArgs),
}

#[derive(Args)]
struct SqSimulateArgs {
    /// Randomizer matrix JSON
    #[arg(long)]
    matrix: PathBuf,
    /// Per-draw statistical error budget in (0, 1/3)
    #[arg(long)]
    beta: f64,
    /// Number of simulated draws
    #[arg(long)]
    runs: u64,
    /// Root seed; draw i uses seed + i
    #[arg(long)]
    seed: u64,
    /// Input mixture as comma-separated weights (default: uniform)
    #[arg(long)]
    u: Option<String>,
    /// Write the JSON report here, plus a .csv mirror of the per-output table
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SqOutputRow {
    z: usize,
    exact: f64,
    empirical: f64,
}

#[derive(Serialize)]
struct SqSimulateReport {
    command: &'static str,
    matrix: String,
    beta: f64,
    runs: u64,
    seed: u64,
    u: Vec<f64>,
    epsilon_star: f64,
    tv: f64,
    tv_sigma: f64,
    tv_cap: f64,
    mean_queries: f64,
    queries_cap: f64,
    outputs: Vec<SqOutputRow>,
    pass: bool,
}

fn sq_simulate(args: &SqSimulateArgs) -> CliResult<bool> {
    if args.runs == 0 {
        return Err("runs must be >= 1".into());
    }
    let r = load_matrix(&args.matrix)?;
    let cert = find_min_domination(&r, 0.0)?;
    let u = match &args.u {
        Some(text) => parse_weights(text, r.num_inputs())?,
        None => vec![1.0 / r.num_inputs() as f64; r.num_inputs()],
    };
    let draws: Vec<(usize, u64)> = (0..args.runs)
        .into_par_iter()
        .map(|i| -> CliResult<(usize, u64)> {
            let mut rng = ChaCha20Rng::seed_from_u64(args.seed.wrapping_add(i));
            let mut oracle = SQOracle::new(u.clone(), NoiseMode::WorstCaseWithinTau)?;
            Ok(simulate_dominated(&r, &cert, args.beta, &mut oracle, &mut rng)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let m = r.tuple_count();
    let mut emp = vec![0.0f64; m];
    let mut total_queries = 0u64;
    for &(z, q) in &draws {
        emp[z] += 1.0;
        total_queries += q;
    }
    for e in &mut emp {
        *e /= args.runs as f64;
    }
    let exact: Vec<f64> = (0..m)
        .map(|z| u.iter().zip(&r.rows).map(|(w, row)| w * row[z]).sum())
        .collect();
    let tv = 0.5
        * exact
            .iter()
            .zip(&emp)
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>();
    let sigma = 0.5
        * exact
            .iter()
            .map(|p| (p * (1.0 - p) / args.runs as f64).sqrt())
            .sum::<f64>();
    let tv_cap = 5.0 * args.beta + 3.0 * sigma;
    let mean_queries = total_queries as f64 / args.runs as f64;
    let queries_cap = 2.0 * cert.epsilon_star.exp();
    let pass = tv <= tv_cap && mean_queries <= queries_cap;
    let report = SqSimulateReport {
        command: "sq simulate",
        matrix: args.matrix.display().to_string(),
        beta: args.beta,
        runs: args.runs,
        seed: args.seed,
        u,
        epsilon_star: cert.epsilon_star,
        tv,
        tv_sigma: sigma,
        tv_cap,
        mean_queries,
        queries_cap,
        pass,
        outputs: exact
            .iter()
            .zip(&emp)
            .enumerate()
            .map(|(z, (e, q))| SqOutputRow {
                z,
                exact: *e,
                empirical: *q,
            })
            .collect(),
    };
    emit(&report, args.out.as_deref())?;
    if let Some(out) = &args.out {
        let lines: Vec<String> = report
            .outputs
            .iter()
            .map(|row| format!("{},{},{}", row.z, row.exact, row.empirical))
            .collect();
        write_csv(out, "z,exact,empirical", &lines)?;
    }
    Ok(report.pass)
}

// ---------------------------------------------------------------------------
// distinguish
// ---------------------------------------------------------------------------

#[derive(Subcommand)]
enum DistinguishCmd {
    /// Empirical distinguishing advantage between transcripts of
    /// uniform-cube datasets and alpha-biased parity-mixture datasets under
    /// the weak-privacy local randomizer. Each trial draws one dataset from
    /// each family over the 2^dim cube, samples the transcript's parity-count
    /// statistic from its exact law, and runs the analyzer; the advantage is
    /// the two-sample Kolmogorov-Smirnov distance between the two estimate
    /// samples.
    Run(DistinguishArgs),
}

#[derive(Args)]
struct DistinguishArgs {
    /// Mixture bias of the biased family
    #[arg(long)]
    alpha: f64,
    /// Cube dimension (universe size 2^dim)
    #[arg(long, default_value_t = 8)]
    dim: u32,
    /// Users per dataset, at least 2^dim (default: 2^dim)
    #[arg(long)]
    n: Option<u64>,
    /// Parity direction of the biased family
    #[arg(long, default_value_t = 1)]
    s: u64,
    /// Trials per family
    #[arg(long, default_value_t = 400)]
    trials: u64,
    /// Root seed; trial t uses seed + t
    #[arg(long)]
    seed: u64,
    /// Write the JSON report here, plus a .csv mirror of the trial table
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct DistinguishRow {
    estimate_uniform: f64,
    estimate_alpha: f64,
}

#[derive(Serialize)]
struct DistinguishReport {
    command: &'static str,
    alpha: f64,
    dim: u32,
    n: u64,
    s: u64,
    trials: u64,
    seed: u64,
    eps_local: f64,
    /// Two-sample Kolmogorov-Smirnov distance between the estimate samples:
    /// the advantage of the best threshold distinguisher on this statistic.
    advantage: f64,
    mean_estimate_uniform: f64,
    mean_estimate_alpha: f64,
    expected_distinct_uniform: f64,
    expected_distinct_alpha: f64,
    trial_rows: Vec<DistinguishRow>,
    pass: bool,
}

fn distinguish_run(args: &DistinguishArgs) -> CliResult<bool> {
    if args.trials == 0 {
        return Err("trials must be >= 1".into());
    }
    let d_cube = 1u64
        .checked_shl(args.dim)
        .filter(|_| args.dim >= 1 && args.dim <= 30)
        .ok_or("dim must lie in [1, 30]")?;
    let n = args.n.unwrap_or(d_cube);
    if n < d_cube {
        return Err(format!("n = {n} below the universe size 2^dim = {d_cube}").into());
    }
    let params = local_weak_constants(n);
    let tau = 1.0f64.exp();
    let spec_uniform = ParityMixtureSpec {
        d: args.dim,
        ell: 0,
        s: args.s,
        alpha: 0.0,
    };
    let spec_alpha = ParityMixtureSpec {
        d: args.dim,
        ell: 0,
        s: args.s,
        alpha: args.alpha,
    };
    spec_alpha.validate()?;
    let rows: Vec<DistinguishRow> = (0..args.trials)
        .into_par_iter()
        .map(|t| -> CliResult<DistinguishRow> {
            let mut rng = ChaCha20Rng::seed_from_u64(args.seed.wrapping_add(t));
            let transcript_estimate = |spec: &ParityMixtureSpec,
                                       rng: &mut ChaCha20Rng|
             -> CliResult<f64> {
                let held = sample_parity_mixture(spec, n, rng)?.distinct_nonzero();
                let c = local_weak_sample_parity_sum(held, &params, rng);
                Ok(analyze_from_parity_count(c as f64, params.n, tau))
            };
            Ok(DistinguishRow {
                estimate_uniform: transcript_estimate(&spec_uniform, &mut rng)?,
                estimate_alpha: transcript_estimate(&spec_alpha, &mut rng)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut sample_u: Vec<f64> = rows.iter().map(|r| r.estimate_uniform).collect();
    let mut sample_a: Vec<f64> = rows.iter().map(|r| r.estimate_alpha).collect();
    let advantage = ks_distance(&mut sample_u, &mut sample_a);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let report = DistinguishReport {
        command: "distinguish run",
        alpha: args.alpha,
        dim: args.dim,
        n,
        s: args.s,
        trials: args.trials,
        seed: args.seed,
        eps_local: params.local_epsilon(),
        advantage,
        mean_estimate_uniform: mean(&sample_u),
        mean_estimate_alpha: mean(&sample_a),
        expected_distinct_uniform: expected_distinct(0.0, n),
        expected_distinct_alpha: expected_distinct(args.alpha, n),
        pass: true,
        trial_rows: rows,
    };
    emit(&report, args.out.as_deref())?;
    if let Some(out) = &args.out {
        let lines: Vec<String> = report
            .trial_rows
            .iter()
            .map(|r| format!("{},{}", r.estimate_uniform, r.estimate_alpha))
            .collect();
        write_csv(out, "estimate_uniform,estimate_alpha", &lines)?;
    }
    Ok(report.pass)
}

/// Two-sample Kolmogorov-Smirnov distance (sup-norm between the empirical
/// CDFs). Sorts both samples in place.
fn ks_distance(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn load_matrix(path: &Path) -> CliResult<RandomizerMatrix> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("matrix {}: {e}", path.display()))?;
    let r: RandomizerMatrix = serde_json::from_str(&text)?;
    r.validate()?;
    Ok(r)
}

fn load_pair(path: &Path) -> CliResult<MomentPair> {
    let text = fs::read_to_string(path).map_err(|e| format!("pair {}: {e}", path.display()))?;
    let pair: MomentPair = serde_json::from_str(&text)?;
    pair.verify(1e-9)?;
    Ok(pair)
}

fn parse_weights(text: &str, want: usize) -> CliResult<Vec<f64>> {
    let weights: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("weights '{text}': {e}"))?;
    if weights.len() != want {
        return Err(format!("got {} weights, matrix has {want} inputs", weights.len()).into());
    }
    if weights.iter().any(|&w| w < 0.0) {
        return Err("weights must be nonnegative".into());
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(format!("weights sum to {total}, not 1").into());
    }
    Ok(weights)
}

/// Nearest-rank quantiles of absolute errors.
fn abs_quantiles(abs_errors: &[f64]) -> Quantiles {
    let mut sorted = abs_errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let at = |q: f64| {
        if sorted.is_empty() {
            f64::NAN
        } else {
            sorted[((sorted.len() as f64 - 1.0) * q).round() as usize]
        }
    };
    Quantiles {
        p50: at(0.5),
        p90: at(0.9),
        p95: at(0.95),
        max: *sorted.last().unwrap_or(&f64::NAN),
    }
}

/// Print the report to stdout and mirror it to `--out` when given.
fn emit<T: Serialize>(report: &T, out: Option<&Path>) -> CliResult<()> {
    let json = serde_json::to_string_pretty(report)?;
    println!("{json}");
    if let Some(path) = out {
        fs::write(path, format!("{json}\n"))
            .map_err(|e| format!("writing {}: {e}", path.display()))?;
    }
    Ok(())
}

/// Write the CSV mirror next to the JSON report (same stem, .csv extension).
fn write_csv(json_out: &Path, header: &str, lines: &[String]) -> CliResult<()> {
    let path = json_out.with_extension("csv");
    let mut text = String::with_capacity(lines.len() * 24 + header.len() + 2);
    text.push_str(header);
    text.push('\n');
    for line in lines {
        text.push_str(line);
        text.push('\n');
    }
    fs::write(&path, text).map_err(|e| format!("writing {}: {e}", path.display()))?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<bool> {
    match &cli.command {
        Command::Countdistinct(CountDistinctCmd::Run(args)) => cd_run(args),
        Command::Countdistinct(CountDistinctCmd::Weak(args)) => cd_weak(args),
        Command::Selection(SelectionCmd::Run(args)) => sel_run_cmd(args),
        Command::Audit(AuditCmd::Parity(args)) => audit_parity(args),
        Command::Audit(AuditCmd::Protocol1d(args)) => audit_protocol_1d_cmd(args),
        Command::Audit(AuditCmd::Domination(args)) => audit_domination(args),
        Command::Audit(AuditCmd::KlBound(args)) => audit_kl(args),
        Command::Audit(AuditCmd::PseudoLocal(args)) => audit_pseudo_local(args),
        Command::Audit(AuditCmd::HsBound(args)) => audit_hs(args),
        Command::Audit(AuditCmd::PoissonTv(args)) => audit_poisson(args),
        Command::Audit(AuditCmd::OracleAgreement) => audit_oracle_agreement(),
        Command::Hardness(HardnessCmd::MomentPair(args)) => hardness_moment_pair(args),
        Command::Hardness(HardnessCmd::Distinct(args)) => hardness_distinct(args),
        Command::Sq(SqCmd::Simulate(args)) => sq_simulate(args),
        Command::Distinguish(DistinguishCmd::Run(args)) => distinguish_run(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
