use thiserror::Error;

use crate::control::DdpSolution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Cholesky factorization failed at every rung of the jitter ladder.
    #[error("kernel matrix is not positive definite (jitter tried: {jitter_tried:?})")]
    NotPositiveDefinite { jitter_tried: Vec<f64> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A state left the safe set: `h_i(x) <= 0`.
    #[error("safe-set boundary violated at step {step:?}: constraint {constraint} has h = {value}")]
    BoundaryViolation {
        step: Option<usize>,
        constraint: usize,
        value: f64,
    },

    #[error("Riccati iteration diverged (trace(P) = {trace:e}); system is not stabilizable")]
    NotStabilizable { trace: f64 },

    /// DDP could not find a descent step; carries the best solution found.
    #[error("DDP stalled after {} iterations at cost {}", .0.iterations, .0.cost())]
    Stalled(Box<DdpSolution>),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Attach a rollout step index to a boundary violation.
    pub fn at_step(self, k: usize) -> Self {
        match self {
            Error::BoundaryViolation {
                constraint, value, ..
            } => Error::BoundaryViolation {
                step: Some(k),
                constraint,
                value,
            },
            other => other,
        }
    }
}
