//! Workbench for message-efficient protocols in the shuffle model of
//! differential privacy, together with the exact-divergence audits and
//! hard-instance generators used to validate them.
//!
//! The crate is organized around three layers:
//!
//! * numeric foundations: windowed discrete distributions with explicit
//!   truncation accounting ([`distlib`]) and an exact rational LP solver
//!   ([`lp`]);
//! * protocol machinery: the shuffle-execution harness ([`shuffle_core`]),
//!   the count-distinct protocol family ([`countdistinct`]), and the
//!   low-message selection protocol ([`selection`]);
//! * analysis tooling: hard-instance generators ([`hardness`]), privacy
//!   audits ([`auditor`]), the statistical-query reduction ([`sq_bridge`]),
//!   and the end-to-end experiment runners ([`acceptance`]).
//!
//! Every randomized routine takes an explicit seed and is reproducible
//! bit-for-bit from (configuration, seed).

pub mod acceptance;
pub mod auditor;
pub mod countdistinct;
pub mod distlib;
pub mod error;
pub mod hardness;
pub mod lp;
pub mod selection;
pub mod shuffle_core;
pub mod sq_bridge;

pub use error::{Error, Result};
