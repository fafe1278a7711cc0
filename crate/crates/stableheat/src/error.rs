//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction and the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A model definition or run configuration is invalid. The message names
    /// the offending field and the constraint it violates.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An iterative routine failed to reach its target tolerance within its
    /// budget.
    #[error("numerical convergence failure: {0}")]
    Convergence(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn convergence(msg: impl Into<String>) -> Self {
        Error::Convergence(msg.into())
    }
}
