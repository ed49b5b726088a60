//! Error taxonomy shared across the toolkit.
//!
//! Validation problems (bad parameters, malformed config, inconsistent field
//! shapes) are distinguished from numerical failures (loss of positive
//! definiteness, stalled line searches, non-convergent projections) so the CLI
//! can map them to distinct exit codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or structural argument is outside its documented domain.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    /// Config file could not be parsed or a key failed validation.
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// A matrix that must be positive definite is not.
    #[error("{context}: matrix not positive definite (min eigenvalue {min_eig:.6e})")]
    NotPositiveDefinite { context: String, min_eig: f64 },

    /// Condition number exceeded the configured cap.
    #[error("{context}: matrix ill-conditioned (cond {cond:.3e} exceeds cap {cap:.3e})")]
    IllConditioned { context: String, cond: f64, cap: f64 },

    /// The dual shift A = sym(z* + sigma~) + K I lost definiteness at a node.
    #[error("shifted matrix not positive definite at node ({i}, {j}, {k})")]
    ShiftedMatrixNotPd { i: usize, j: usize, k: usize },

    /// A field or point violates one of the feasible sets.
    #[error("constraint violated: {0}")]
    ConstraintViolation(String),

    /// Backtracking exhausted its halvings without sufficient decrease.
    #[error("line search failed after {halvings} halvings at iteration {iteration}")]
    LineSearchFailed { iteration: usize, halvings: usize },

    /// An iterative solve hit its budget before reaching tolerance.
    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    /// Least-squares constraint projection did not reach its residual target.
    #[error("projection failed: residual {residual:.3e} after {iterations} iterations")]
    ProjectionFailed { residual: f64, iterations: usize },

    /// Numerical conjugation found its maximum on the search-box boundary.
    #[error("sup appears unbounded: maximizer on the search-box boundary")]
    UnboundedSup,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Exit code the CLI should use: 1 for validation errors, 2 for
    /// numerical failures, consistent with the documented interface.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::InvalidParameter { .. } | Error::Config { .. } | Error::Io(_) => 1,
            _ => 2,
        }
    }
}
