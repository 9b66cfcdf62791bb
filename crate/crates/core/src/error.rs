//! Crate-wide error type.

use alloc::string::String;

/// Errors surfaced by validation, solvers, and training loops.
///
/// Shape mismatches between tape tensors are programming errors and panic
/// instead; see the `autodiff` module docs.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An input failed domain validation. The message names the offending
    /// field and the violated constraint.
    Invalid(String),
    /// A linear system that must have a unique solution did not.
    Singular(&'static str),
    /// An iterative solver exhausted its iteration budget.
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    /// Normalized-return denominator vanished: the optimal and uniform
    /// policies score identically on this MDP.
    DegenerateNormalization { j_random: f64, j_expert: f64 },
    /// A loss or gradient stopped being finite during optimization.
    NonFinite { what: &'static str, step: usize },
    /// An internal cross-check failed; indicates a bug in this crate.
    Inconsistent(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
            Error::Singular(what) => write!(f, "singular linear system in {what}"),
            Error::NonConvergence {
                what,
                iterations,
                residual,
            } => write!(
                f,
                "{what} failed to converge after {iterations} iterations (residual {residual:e})"
            ),
            Error::DegenerateNormalization { j_random, j_expert } => write!(
                f,
                "normalized return undefined: j_expert ({j_expert}) equals j_random ({j_random})"
            ),
            Error::NonFinite { what, step } => {
                write!(f, "{what} became non-finite at step {step}")
            }
            Error::Inconsistent(msg) => write!(f, "internal consistency check failed: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

/// Shorthand for building [`Error::Invalid`] with formatting.
macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::Invalid(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
