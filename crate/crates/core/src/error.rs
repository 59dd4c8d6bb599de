use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = UstError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum UstError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid model configuration: {0}")]
    InvalidModel(String),

    #[error("invalid pass matrix: {0}")]
    InvalidPassMatrix(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error(
        "non-finite loss {loss} at optimizer step {step}; the learning rate is probably too high"
    )]
    NonFiniteLoss { loss: f64, step: u64 },

    #[error("parameters became non-finite at optimizer step {step}")]
    NonFiniteParameters { step: u64 },

    #[error("invalid sample weight {0}: must be finite and non-negative")]
    InvalidWeight(f64),

    #[error("empty candidate pool: the self-training round must be skipped")]
    EmptyPool,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("class {class:?} has {available} training examples, need at least {required}")]
    InsufficientClass {
        class: String,
        available: usize,
        required: usize,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl UstError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        UstError::Io {
            path: path.into(),
            source,
        }
    }
}
