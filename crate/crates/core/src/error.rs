use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("corrupt sample at index {index}: value {value} exceeds {max}")]
    CorruptSample { index: usize, value: u32, max: u32 },
    #[error("ingest error for {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },
    #[error("manifest schema error at row {row}: {reason}")]
    Schema { row: usize, reason: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("image has no non-background pixels")]
    EmptyContent,
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("phantom spec error: {0}")]
    Spec(String),
    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Nn(#[from] debias_nn::NnError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Self::Argument(msg.into())
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
