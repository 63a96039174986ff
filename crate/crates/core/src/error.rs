use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the feature extraction and evaluation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed audio file: {cause}")]
    MalformedAudio { path: PathBuf, cause: String },

    #[error("{path}: unsupported audio encoding: {cause}")]
    UnsupportedEncoding { path: PathBuf, cause: String },

    #[error("{path}: sample rate {found} Hz differs from expected {expected} Hz (enable resampling to accept it)")]
    SampleRateMismatch { path: PathBuf, found: u32, expected: u32 },

    #[error("invalid audio clip: {0}")]
    InvalidClip(String),

    #[error("signal of {available} samples is shorter than one {window}-sample window")]
    ClipTooShort { available: usize, window: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero-norm input vector cannot be projected")]
    ZeroInput,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate template {template}: transformed member for parameter {parameter} has norm {norm:e}")]
    DegenerateTemplate { template: usize, parameter: f64, norm: f64 },

    #[error("degenerate mel filter bank: filter {0} covers no frequency bins")]
    DegenerateFilterBank(usize),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("class {class:?} has {count} track(s); at least 2 are required to split")]
    ClassTooSmall { class: String, count: usize },

    #[error("{path}: corrupted file: {cause}")]
    Corrupted { path: PathBuf, cause: String },

    #[error("config hash mismatch: file has {found}, active configuration is {expected}")]
    HashMismatch { expected: String, found: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs or configuration rather
    /// than by a bug or an environment failure.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Invariant(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
