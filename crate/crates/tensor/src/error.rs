use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    /// Shapes or hyperparameters that the operation cannot accept.
    #[error("parameter error: {0}")]
    Param(String),
    /// A forward pass met non-finite values.
    #[error("computation error: {0}")]
    Computation(String),
    /// The graph was used out of order (e.g. a second backward pass).
    #[error("state error: {0}")]
    State(String),
    #[error("checkpoint I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

macro_rules! param_err {
    ($($arg:tt)*) => {
        $crate::error::TensorError::Param(format!($($arg)*))
    };
}
pub(crate) use param_err;
