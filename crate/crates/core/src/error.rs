use phenocast_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("checkpoint error: {message} (tensors: {})", .tensors.join(", "))]
    Checkpoint { message: String, tensors: Vec<String> },
    #[error("non-finite loss at epoch {epoch}, step {step}, batch {batch}: {detail}")]
    NonFinite {
        epoch: usize,
        step: u64,
        batch: usize,
        detail: String,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Self::Contract(msg.into())
    }
}
