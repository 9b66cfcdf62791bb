//! Process-level error classification and exit codes.

use std::fmt;

/// Exit code contract: 0 success, 1 usage, 2 validation/data failure,
/// 3 assertion or bound failure.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation shape (beyond what argument parsing catches).
    Usage(String),
    /// Invalid inputs: unreadable files, schema mismatches, bad values.
    Validation(String),
    /// A checked mathematical assertion failed (verify-theory).
    Assertion(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Assertion(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Validation(msg) => write!(f, "{msg}"),
            CliError::Assertion(msg) => write!(f, "assertion failed: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<bdt_core::Error> for CliError {
    fn from(e: bdt_core::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(format!("I/O error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Validation error with context about which file it came from.
pub fn file_error(path: &std::path::Path, msg: impl fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {msg}", path.display()))
}
