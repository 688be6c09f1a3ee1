use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SpadeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SpadeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("cannot decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// A model file is missing, unreadable or not a usable graph.
    #[error("model load error: {0}")]
    ModelLoad(String),

    /// The model ran but failed or produced unusable outputs.
    #[error("inference error: {0}")]
    Inference(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite activation in layer `{layer}`")]
    NonFinite { layer: String },

    #[error("unknown image id `{0}`")]
    UnknownImage(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    /// The metric has no defined value for this input (e.g. one class only).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

impl SpadeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SpadeError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        SpadeError::Json {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by user input (flags, config files, parameters,
    /// dataset paths) rather than by the environment or a computation.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            SpadeError::Config(_) | SpadeError::Parameter(_) | SpadeError::Dataset(_)
        )
    }
}
