use std::path::PathBuf;

use thiserror::Error;

use crate::trainer::Checkpoint;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{mlp}: expected input of length {expected}, got {got}")]
    DimensionMismatch {
        mlp: String,
        expected: usize,
        got: usize,
    },

    #[error("{mlp}: activation cache was produced by a different network")]
    StaleCache { mlp: String },

    #[error("non-finite gradient at parameter index {index}")]
    NonFiniteGradient { index: usize },

    #[error("objective is not finite when perturbing parameter index {index}")]
    NonFiniteObjective { index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: {message}", path.display())]
    Frame { path: PathBuf, message: String },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("config line {line}, key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Diverged {
        epoch: usize,
        step: usize,
        last_finite: Box<Checkpoint>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
