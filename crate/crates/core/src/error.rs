use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("augmentation spec error: {0}")]
    Spec(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot ingest video {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },

    #[error("video {0} contains no decodable frames")]
    EmptyVideo(PathBuf),

    #[error("image error at {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("manifest error at {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("non-finite loss at step {step}: {components}")]
    NonFiniteLoss { step: usize, components: String },

    #[error("json error: {0}")]
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
