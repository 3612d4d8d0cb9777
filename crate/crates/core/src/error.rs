//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by fitting, evaluation, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the documented domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A quantity required by an evaluation is degenerate (e.g. zero
    /// marginal mass at the requested count).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// A precondition on the model state was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The NPMLE iteration hit its iteration cap without certifying
    /// optimality.
    #[error(
        "NPMLE did not converge: gradient gap {gap:.3e} after {iterations} iterations (tolerance {tol:.1e})"
    )]
    NonConvergence {
        gap: f64,
        iterations: usize,
        tol: f64,
        /// Diagnostics of the failed fit, for inspection by callers.
        diagnostics: crate::npmle::FitDiagnostics,
    },

    /// The linear-programming solver failed numerically.
    #[error("LP solver failure: {0}")]
    Solver(String),

    /// A serialized model or rule violates its schema invariants.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// JSON (de)serialization failure.
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn evaluation(msg: impl Into<String>) -> Self {
        Error::Evaluation(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
