//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("regressor is rank deficient (rank {rank} < {expected}); near-null directions: {directions}")]
    RankDeficient {
        rank: usize,
        expected: usize,
        directions: String,
    },

    #[error("base reduction found {found} parameters, expected {expected}; suspect columns: {detail}")]
    UnexpectedBaseCount {
        found: usize,
        expected: usize,
        detail: String,
    },

    #[error("inertia matrix not positive definite at pose {pose:?} (min eigenvalue {min_eig:.3e})")]
    NonPositiveDefinite { pose: Vec<f64>, min_eig: f64 },

    #[error("simulation diverged at t={t:.4}s on axis {axis} (|velocity| {value:.3e} exceeds bound)")]
    Divergence { t: f64, axis: usize, value: f64 },

    #[error("trajectory segment {index} of '{label}' infeasible: {reason}")]
    InfeasibleSegment {
        label: String,
        index: usize,
        reason: String,
    },

    #[error("log too short: {got} target-grid samples, need at least {need}")]
    LogTooShort { got: usize, need: usize },

    #[error("feasible projection failed for every margin in the ladder {ladder:?}: {detail}")]
    LadderExhausted { ladder: Vec<f64>, detail: String },

    #[error("refinement requires a positive definite initial model (min eigenvalue {min_eig:.3e} at {pose:?})")]
    NonPdInit { pose: Vec<f64>, min_eig: f64 },

    #[error("empty validation set")]
    EmptyValidation,

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
