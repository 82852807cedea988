//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A mathematical precondition was violated (non-positive depth,
    /// non-unit direction, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs with incompatible shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Malformed or corrupt file contents.
    #[error("format error: {0}")]
    Format(String),

    /// Text input that failed to parse, with its 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Non-finite gradient encountered during optimization.
    #[error("non-finite gradient in parameter class `{0}`")]
    NonFiniteGradient(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
