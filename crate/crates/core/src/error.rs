use thiserror::Error;

/// Errors shared by every module of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated an operation's input contract (shapes, lengths, ranges).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A numeric argument is outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient texture: only {found} matches found")]
    InsufficientTexture { found: usize },
    #[error("degenerate fundamental matrix: {0}")]
    DegenerateF(String),
    #[error("degenerate homography: {0}")]
    DegenerateH(String),
    #[error("every record was removed by the floor filter")]
    EmptyAfterFilter,
    #[error("frustum violation: {0}")]
    FrustumViolation(String),
    /// Optimization produced a non-finite loss.
    #[error("optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    /// Malformed file contents; `offset` is the byte offset where decoding failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
