use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or out-of-domain configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] rfeh_core::Error),

    /// A check over the results failed.
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for bad input, 3 when the solver gives up, 4 for failed checks.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(rfeh_core::Error::SolverFailure(_)) => 3,
            CliError::Core(_) => 2,
            CliError::Validation(_) => 4,
            CliError::Io { .. } => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
