use thiserror::Error;

/// Failure classes, one per exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// A check (gradient suite) ran and failed.
    #[error("{0}")]
    Check(String),
    /// Bad flags, config or inputs.
    #[error("{0}")]
    Usage(String),
    /// Training produced a non-finite value and was aborted.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<advlab::Error> for CliError {
    fn from(e: advlab::Error) -> Self {
        match e {
            advlab::Error::NonFinite(_) => CliError::Numeric(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}
