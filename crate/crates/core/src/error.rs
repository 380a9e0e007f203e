use thiserror::Error;

/// Errors raised by the estimators, attack models and simulation harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter or input violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A linear solve or decomposition failed on input that should have been well conditioned.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The requested computation exceeds a hard resource limit.
    #[error("resource limit exceeded: {0}")]
    Resource(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
