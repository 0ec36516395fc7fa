//! Crate-wide error type.
//!
//! Numeric routines fail loudly: bad arguments, mixed grids, unphysical
//! intermediate fields, and diverging iterations are all distinct variants so
//! callers (and tests) can match on the cause.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its documented domain (non-positive length,
    /// too few nodes, lambda below one, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two fields that must live on the same grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A field violates a physical positivity requirement (for example the
    /// normalized total field w must stay strictly positive before taking
    /// its logarithm).
    #[error("unphysical field: {0}")]
    Physicality(String),

    /// A linear solve failed (singular or non-positive-definite system).
    #[error("linear solver failure: {0}")]
    Solver(String),

    /// A constraint set cannot be satisfied (for example the boundary lift
    /// alone already exceeds the ball radius).
    #[error("infeasible constraint: {0}")]
    InfeasibleConstraint(String),

    /// Gradient descent is diverging; the step size is too large.
    #[error("step size too large: {0}")]
    StepSize(String),

    /// A run configuration failed validation.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
