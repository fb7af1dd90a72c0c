//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes or dimensions do not agree.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A class label is outside the valid range.
    #[error("label error: {0}")]
    Label(String),
    /// An API contract was violated by the caller.
    #[error("usage error: {0}")]
    Usage(String),
    /// Dataset contents are invalid.
    #[error("data error: {0}")]
    Data(String),
    /// A serialized file is malformed or has an unsupported version.
    #[error("format error: {0}")]
    Format(String),
    /// The alignment controller was driven with inconsistent statistics.
    #[error("controller error: {0}")]
    Controller(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
