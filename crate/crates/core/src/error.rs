use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {shape:?}: every extent must be at least 1")]
    InvalidShape { shape: Vec<usize> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("sample {index} has {frames} valid frames, at least {minimum} are required")]
    SampleTooShort {
        index: usize,
        frames: usize,
        minimum: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("batch norm running statistics are uninitialized; run at least one training step first")]
    UninitializedStats,

    #[error("sample {0} has an empty pooling window")]
    EmptyPool(usize),

    #[error("label error: {0}")]
    Label(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("class {0} has no true samples; its accuracy is undefined")]
    UndefinedClass(usize),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("cannot access {}", path.display())]
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
