use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds max_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("decoder prefix must begin with BOS")]
    MissingBos,
    #[error("operation needs a {expected} model")]
    WrongMode { expected: &'static str },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("dataset: {0}")]
    Data(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGrad(String),
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
    #[error("evaluation: {0}")]
    Eval(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("experiment: {0}")]
    Experiment(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
