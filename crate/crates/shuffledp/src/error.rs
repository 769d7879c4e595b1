//! Error taxonomy shared across the workbench.
//!
//! Numeric routines distinguish *caller* mistakes (bad parameter domains,
//! violated preconditions) from *internal* failures (invariants broken by
//! accumulated floating error, truncation budgets that cannot be met). Audit
//! code treats the two differently: a parameter error aborts the experiment,
//! while an invariant error indicates the tool itself can no longer vouch for
//! its output.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its documented domain.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// An internal invariant failed (e.g. a probability mass drifted outside
    /// tolerance); results would be untrustworthy.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// A randomizer was handed an input outside its declared input space.
    #[error("input domain error: {0}")]
    InputDomain(String),

    /// The public-coin protocol's message budget cannot support even a single
    /// hash bucket at these parameters; only the trivial output is available.
    #[error("trivial regime: {0}")]
    TrivialRegime(String),

    /// A linear program has no feasible point; carries a human-readable
    /// certificate of which constraint set failed.
    #[error("infeasible program: {0}")]
    Infeasible(String),

    /// A truncation budget cannot be attained within the permitted window.
    #[error("budget error: {0}")]
    Budget(String),

    /// An exact enumeration was requested above its state-space cap.
    #[error("scale error: {0}")]
    Scale(String),

    /// An analysis routine's precondition does not hold for these inputs.
    #[error("precondition error: {0}")]
    Precondition(String),

    /// A rejection sampler made no progress; the certificate it was built
    /// from does not describe the randomizer it is simulating.
    #[error("broken certificate: {0}")]
    BrokenCertificate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
