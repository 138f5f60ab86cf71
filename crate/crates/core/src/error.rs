//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type. Faults (kernel invariant breaches, overflow on
/// checked paths) and invalid arguments are distinguished so the CLI can map
/// them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("integer overflow: {0}")]
    Overflow(String),

    #[error("kernel invariant breach: {0}")]
    KernelFault(String),

    #[error("tensor file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
