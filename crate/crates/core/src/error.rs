use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor dimensions do not line up for an operation.
    #[error("dimension error: {0}")]
    Shape(String),

    /// A NaN or infinity appeared in a value that must stay finite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API was called in a way that cannot be satisfied.
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data failed validation (manifest, labels, config, images).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
