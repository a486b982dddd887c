//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, solvers and estimators.
///
/// The split matters to callers: `InvalidModel`/`Domain` indicate bad inputs,
/// the remaining variants indicate numerical or statistical failure on inputs
/// that passed validation.
#[derive(Debug, Error)]
pub enum Error {
    /// A model violates a structural invariant.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An argument is outside an operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A required model assumption fails (e.g. no finite absorption horizon).
    #[error("assumption violated: {0}")]
    Assumption(String),

    /// A linear system or iteration failed numerically.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An enumeration or simulation budget was exceeded.
    #[error("budget exceeded: {0}")]
    Budget(String),

    /// A statistical fit could not be performed.
    #[error("estimation failure: {0}")]
    Estimation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
