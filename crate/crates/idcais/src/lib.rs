//! Multi-defender interception of planar attackers under linear-drag
//! double-integrator dynamics.
//!
//! The crate is organized bottom-up:
//!
//! - [`dynamics`]: closed-form propagation of the damped double integrator,
//!   x' = (r + E1(t)v + E2(t)u, e^{-ct}v + E1(t)u).
//! - [`time_optimal`]: minimum-time point-capture with a constant-direction
//!   control of maximum magnitude.
//! - [`engagement`]: 1v1 defender-vs-attacker interception times, the
//!   defender's winning region, and its boundary sensitivity.
//! - [`forecast`]: defender-defender collision prediction along interception
//!   trajectories, with a triangle-overlap rejection test.
//! - [`assignment`]: defender-to-attacker assignment minimizing interception
//!   time plus a collision penalty (exact branch and bound), and the
//!   time-only baseline.
//! - [`safety_filter`]: exponential-barrier quadratic filter that perturbs
//!   nominal defender controls to keep pairwise separation above a floor.
//! - [`scenario`] / [`sim`] / [`sweep`]: JSON scenario I/O, the closed-loop
//!   multi-agent simulation, and batch experiment runners.

// Validation gates are written `!(x > 0.0)` on purpose: the negation sends
// NaN down the rejecting branch, where `x <= 0.0` would wave it through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod dynamics;
pub mod engagement;
pub mod forecast;
pub mod qcqp;
pub mod safety_filter;
pub mod scenario;
pub mod sim;
pub mod sweep;
pub mod time_optimal;
pub mod vec2;

pub use vec2::Vec2;

use std::path::PathBuf;

/// Crate-wide error type. `exit_code` groups variants the way the CLI
/// reports them: bad input vs. solver breakdown.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what} must be finite (got {value})")]
    NonFinite { what: &'static str, value: f64 },
    #[error("{what} must be non-negative (got {value})")]
    NegativeTime { what: &'static str, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("no interception time found while solving {context} (searched up to {horizon} s)")]
    NoRoot { context: &'static str, horizon: f64 },
    #[error("state is not on the winning-region boundary (tau = {tau} s, band {band} s)")]
    NotOnBoundary { tau: f64, band: f64 },
    #[error("inadmissible attacker perturbation: |u* + du| = {norm} exceeds bound {bound}")]
    InadmissiblePerturbation { norm: f64, bound: f64 },
    #[error("degenerate boundary diagnostic: {0}")]
    DegenerateBoundary(&'static str),
    #[error(
        "nominal control too close to the bound for defender {index}: |u*| = {norm}, limit {limit}"
    )]
    NominalControlTooLarge { index: usize, norm: f64, limit: f64 },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// CLI process exit code: 2 for input/validation problems, 3 for
    /// numerical/solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParams(_)
            | Error::Scenario(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::NonFinite { .. }
            | Error::NegativeTime { .. } => 2,
            Error::NoRoot { .. }
            | Error::NotOnBoundary { .. }
            | Error::InadmissiblePerturbation { .. }
            | Error::DegenerateBoundary(_)
            | Error::NominalControlTooLarge { .. }
            | Error::Solver(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(what: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what, value })
    }
}
