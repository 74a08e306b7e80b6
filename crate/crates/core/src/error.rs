use std::path::PathBuf;

use mcnet_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum McError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: cannot decode image: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("weight `{key}`: expected shape {expected:?}, found {found:?}")]
    WeightShape { key: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("non-finite loss at step {step} (batch: {names:?})")]
    NonFiniteLoss { step: usize, names: Vec<String> },
}

pub type Result<T, E = McError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> McError {
    let path = path.into();
    move |source| McError::Io { path, source }
}
