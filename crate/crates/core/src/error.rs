use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::trainer::EpochRecord;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors surfaced by the core algorithms.
///
/// Variants fall into two families that callers map to distinct exit codes:
/// contract violations (bad inputs) and numerical failures.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not line up.
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    /// A precondition on the inputs does not hold.
    Contract(String),
    /// An iterative kernel hit its iteration cap.
    NonConvergence {
        routine: &'static str,
        iterations: usize,
    },
    /// A non-finite or otherwise unusable intermediate value.
    Numerical(String),
    /// A non-finite value while evaluating one data row.
    NonFiniteRow { row: usize },
    /// The objective blew up; carries the history up to the last good epoch.
    TrainingDiverged { epoch: usize, history: Vec<EpochRecord> },
    /// Every candidate of a tuning pass diverged.
    TuningFailed { pass: usize, diverged: Vec<f64> },
    /// A variance estimate that must be positive came out as zero.
    DegenerateVariance(&'static str),
}

impl Error {
    /// `true` for precondition failures, `false` for numerical trouble.
    pub fn is_contract_violation(&self) -> bool {
        matches!(self, Error::DimensionMismatch { .. } | Error::Contract(_))
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                context,
                expected,
                found,
            } => write!(f, "{context}: expected dimension {expected}, found {found}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::NonConvergence {
                routine,
                iterations,
            } => write!(f, "{routine} did not converge after {iterations} sweeps"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Error::NonFiniteRow { row } => write!(f, "non-finite value while evaluating row {row}"),
            Error::TrainingDiverged { epoch, .. } => {
                write!(f, "training diverged at epoch {epoch}")
            }
            Error::TuningFailed { pass, diverged } => write!(
                f,
                "tuning pass {pass} failed: every candidate diverged ({diverged:?})"
            ),
            Error::DegenerateVariance(what) => write!(f, "degenerate variance estimate: {what}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
