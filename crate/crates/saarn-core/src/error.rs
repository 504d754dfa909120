//! Crate-wide error types.

use thiserror::Error;

/// Errors surfaced by library operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Array shapes are incompatible with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Input values violate an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A character or index range falls outside its container.
    #[error("range error: {0}")]
    Range(String),

    /// A configuration value is inconsistent or out of bounds.
    #[error("invalid config: {0}")]
    Config(String),

    /// Synthetic generation could not satisfy its constraints.
    #[error("generation error: {0}")]
    Generation(String),

    /// A checkpoint file is missing, corrupt, or has the wrong format version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at {0}")]
    NonFiniteLoss(String),

    /// An external-model client failed.
    #[error(transparent)]
    Client(#[from] ClientError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Failure modes of pluggable external-model clients. Transport-level
/// problems are kept distinct from content-level ones so a pipeline can
/// retry the former and skip-and-log the latter.
#[derive(Debug, Error)]
pub enum ClientError {
    #[error("client timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
