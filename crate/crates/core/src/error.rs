use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NevaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NevaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl NevaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        NevaError::InvalidArgument(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        NevaError::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NevaError::Io {
            path: path.into(),
            source,
        }
    }
}
