use thiserror::Error;

/// Failures of a command, each tied to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    SelfTest(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::SelfTest(_) => 3,
            CliError::Io(_) => 4,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<phenocast::Error> for CliError {
    fn from(e: phenocast::Error) -> Self {
        use phenocast::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Contract(_) => CliError::Usage(msg),
            E::Io(_) | E::Parse { .. } | E::Format(_) | E::Checkpoint { .. } => CliError::Io(msg),
            E::NonFinite { .. } | E::Tensor(_) => CliError::Failed(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
