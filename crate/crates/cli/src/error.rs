//! Error-to-exit-code mapping.
//!
//! 0 success, 1 input or system error, 2 mathematically infeasible,
//! 3 solver numerical failure. Scripts can tell "you erred" apart from
//! "no controller exists".

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Bad input: missing files, malformed CSV/JSON, dimension mismatches.
    Input(String),
    /// The synthesis or bound problem is infeasible as posed.
    Infeasible(String),
    /// The backend could not certify a status.
    Numerical(String),
    /// A verification check failed.
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::CheckFailed(_) => 2,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::CheckFailed(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<safectl_core::Error> for CliError {
    fn from(e: safectl_core::Error) -> Self {
        match e {
            safectl_core::Error::Solver(m) => CliError::Numerical(m),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
