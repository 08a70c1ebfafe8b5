//! Error taxonomy and process exit codes.
//!
//! Every failure a subcommand can hit is folded into one of four buckets
//! with a stable exit code, so scripts driving the binary can branch on
//! the outcome:
//!
//! * `0` — success;
//! * `1` — configuration or usage errors (bad flags, malformed TOML,
//!   dimension mismatches, invalid parameter ranges);
//! * `2` — an invariant or statistical check ran to completion and
//!   failed;
//! * `3` — an iteration budget was exhausted before the requested
//!   tolerance was met (solver non-contraction, optimizer infeasibility,
//!   a Monte-Carlo schedule with too few usable levels).

use rough_core::algebra::AlgebraError;
use rough_core::deviation::DeviationError;
use rough_core::gaussian::GaussianError;
use rough_core::roughpath::RoughPathError;
use rough_core::slowfast::SlowFastError;
use rough_core::RdeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("check failed: {0}")]
    Invariant(String),
    #[error("budget exhausted: {0}")]
    Budget(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Invariant(_) => 2,
            CliError::Budget(_) => 3,
        }
    }
}

/// Solver failures split by cause: running out of halvings or a diverging
/// refinement is a budget problem, anything else is a bad problem
/// description.
impl From<RdeError> for CliError {
    fn from(e: RdeError) -> Self {
        match e {
            RdeError::NonContraction { .. } | RdeError::RefinementDiverging(_) => {
                CliError::Budget(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<DeviationError> for CliError {
    fn from(e: DeviationError) -> Self {
        match e {
            DeviationError::Young(inner) => inner.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<GaussianError> for CliError {
    fn from(e: GaussianError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<AlgebraError> for CliError {
    fn from(e: AlgebraError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<RoughPathError> for CliError {
    fn from(e: RoughPathError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SlowFastError> for CliError {
    fn from(e: SlowFastError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
    }
}

/// Shorthand for ad-hoc configuration errors.
pub fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}
