use std::fmt;

use clueset_core::Error;

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input paths.
    Usage(String),
    /// Divergence or non-finite values.
    Numerical(String),
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        if e.is_numerical() {
            return CliError::Numerical(msg);
        }
        match e {
            Error::InvalidConfig(_)
            | Error::MissingCertainClass(_)
            | Error::EmptyGroup(_)
            | Error::NonDifferentiable(_)
            | Error::Dimension { .. }
            | Error::Corrupt { .. }
            | Error::Json(_) => CliError::Usage(msg),
            _ => CliError::Failed(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
