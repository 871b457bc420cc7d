use thiserror::Error;

#[derive(Debug, Error)]
pub enum FirmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inconsistent kernel: {0}")]
    InconsistentKernel(String),

    #[error("numerical failure at iteration {iteration}: {message}")]
    NumericalFailure { iteration: usize, message: String },

    #[error("kernel cache mismatch: {0}")]
    CacheMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FirmError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(FirmError::InvalidArgument(msg.into()))
}
