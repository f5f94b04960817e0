use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("expected 13 channels, got {0}")]
    ChannelCount(usize),

    #[error("missing channel {0}")]
    MissingChannel(String),

    #[error("length mismatch on {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("sampling rate must be 200 Hz, got {0}")]
    SamplingRate(f64),

    #[error("non-finite sample in {channel} at index {index}")]
    NonFinite { channel: String, index: usize },

    #[error("empty track")]
    EmptyTrack,

    #[error("label {value} at index {index} is not one of -1, 0, 1")]
    InvalidLabel { index: usize, value: i64 },

    #[error("probability {value} at index {index} outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },

    #[error("invalid synthetic record settings: {0}")]
    SyntheticSettings(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("record too short: need at least {needed} samples, got {got}")]
    RecordTooShort { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-target label (-1) present where only 0/1 are allowed")]
    NonTargetLabel,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
