//! Error types shared across the estimation engines.

use thiserror::Error;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A matrix or vector has the wrong shape for the requested operation.
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    /// An input violates a structural requirement (symmetry, positivity, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A model failed unravelling validation; the report lists each violation.
    #[error("rejected model: {0}")]
    RejectedModel(String),

    /// Two grid-aligned objects do not share the same time grid.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A covariance violates the uncertainty bound beyond tolerance.
    #[error("uncertainty relation violated: min eigenvalue {min_eig:.3e} at step {step}")]
    UncertaintyViolation { step: usize, min_eig: f64 },

    /// A Riccati flow failed to reach a fixed point within the time budget.
    #[error("riccati flow did not converge within {t_max} time units (residual {residual:.3e})")]
    Divergence { t_max: f64, residual: f64 },

    /// Two supposedly equivalent computations disagree; indicates a bug in
    /// the caller's model construction.
    #[error("internal consistency failure: {0}")]
    RouteDisagreement(String),
}
