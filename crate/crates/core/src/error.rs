use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward called twice on the same tape")]
    BackwardSpent,
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },
    #[error("probability outside (0,1) in {context}: {value}")]
    InvalidProbability { context: String, value: f64 },
    #[error("config error at line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training aborted at step {step}: {reason} (last good checkpoint: {last_checkpoint})")]
    TrainingAborted {
        step: usize,
        reason: String,
        last_checkpoint: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
