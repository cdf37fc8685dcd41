use std::path::PathBuf;

use hdrtv_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Param(String),
    #[error("computation error: {0}")]
    Computation(String),
    #[error("I/O error: {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("ingestion error: {file}: {message}")]
    Ingest { file: PathBuf, message: String },
    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! param_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Param(format!($($arg)*))
    };
}
pub(crate) use param_err;
