//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a validation contract (non-finite values, bad ranges,
    /// length mismatches).
    #[error("validation: {0}")]
    Validation(String),

    /// Two tensors that must share a shape do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value is out of contract.
    #[error("config: {0}")]
    Config(String),

    /// Dataset-level problems (empty classes, missing roots).
    #[error("dataset: {0}")]
    Dataset(String),

    /// Checkpoint file is malformed or incompatible.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Training diverged or hit an unrecoverable numeric state.
    #[error("training: {0}")]
    Training(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dataset(msg: impl Into<String>) -> Self {
        Error::Dataset(msg.into())
    }

    pub fn checkpoint(msg: impl Into<String>) -> Self {
        Error::Checkpoint(msg.into())
    }

    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }
}
