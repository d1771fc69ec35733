use thiserror::Error;

/// Failure classes, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// The request was understood but breaks a rule of the system.
    #[error("{0}")]
    Contract(String),
    /// A server, the provider or the disk did not answer.
    #[error("{0}")]
    Unavailable(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Contract(_) => 3,
            CliError::Unavailable(_) => 4,
        }
    }
}
