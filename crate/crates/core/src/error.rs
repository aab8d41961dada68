use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the core crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error in {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: &'static str, reason: String },

    #[error("series shorter than window: {len} samples < window length {window}")]
    SeriesTooShort { len: usize, window: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("benchmark `{name}` not found under {root}; expected layout:\n{layout}")]
    MissingBenchmark {
        name: String,
        root: PathBuf,
        layout: String,
    },

    #[error("unsupported benchmark `{0}` (expected one of aiops, ucr, swat, wadi, synthetic)")]
    UnknownBenchmark(String),

    #[error("contamination count {requested} exceeds the {available} available windows")]
    ContaminationOverflow { requested: usize, available: usize },

    #[error("model configuration error: {0}")]
    ModelConfig(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {components}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        components: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("undefined aggregate: total segment count is zero")]
    EmptyAggregate,

    #[error("profile mismatch: {0}")]
    ProfileMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn validation(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation {
            field,
            reason: reason.into(),
        }
    }
}
