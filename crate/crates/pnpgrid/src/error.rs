//! Crate-wide error type.

use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter, file or request violates a documented invariant.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A numerical routine failed to produce a trustworthy result.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A synthesis problem or PnP request has no admissible solution.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// A configuration or data file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
