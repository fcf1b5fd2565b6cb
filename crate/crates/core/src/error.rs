use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{field}`: expected {expected}, got {actual}")]
    DimensionMismatch {
        field: String,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in `{field}` at index {index}")]
    NonFinite { field: String, index: usize },

    #[error("mode {mode} out of range for vocabulary of size {vocab_size} in `{field}`")]
    ModeOutOfRange {
        field: String,
        mode: usize,
        vocab_size: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("need at least {required} points, got {actual}")]
    TooFewPoints { required: usize, actual: usize },

    #[error("invalid scenario mix: {0}")]
    InvalidMix(String),

    #[error("invalid fraction {0}: must lie in [0, 1]")]
    InvalidFraction(f64),

    #[error("malformed record on line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("cannot select {requested} samples from a set of {available}")]
    SelectionTooLarge { requested: usize, available: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no predictions to evaluate")]
    NoPredictions,

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("missing checkpoint for `{0}`")]
    MissingCheckpoint(String),

    #[error("horizon {requested} exceeds sequence length {available}")]
    HorizonTooLong { requested: usize, available: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
