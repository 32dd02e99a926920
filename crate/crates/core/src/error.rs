use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record {record_id}: invalid field \"{field}\": {message}")]
    Validation {
        record_id: String,
        field: String,
        message: String,
    },

    #[error("duplicate record id {0:?}")]
    DuplicateId(String),

    #[error("{estimator}: required input unavailable: {input}")]
    Unavailable { estimator: String, input: String },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("need at least {needed} data points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("similarity row {row} sums to zero; Laplacian undefined")]
    DegenerateSimilarity { row: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("PRR undefined: all quality values are equal, oracle area is zero")]
    UndefinedPrr,

    #[error("unknown estimator {name:?}; valid names: {valid}")]
    UnknownEstimator { name: String, valid: String },

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn unavailable(estimator: &str, input: &str) -> Self {
        Error::Unavailable {
            estimator: estimator.to_string(),
            input: input.to_string(),
        }
    }
}
