use thiserror::Error;

/// Errors raised across the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("context overflow: {needed} positions exceed max context {max}")]
    ContextOverflow { needed: usize, max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A statistic is mathematically undefined for the given input.
    #[error("undefined: {0}")]
    Undefined(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
