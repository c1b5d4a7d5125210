use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor axis had the wrong extent.
    #[error("{op}: dimension mismatch on axis {axis}: expected {expected}, got {actual}")]
    Dim {
        op: &'static str,
        axis: usize,
        expected: usize,
        actual: usize,
    },

    /// A tensor had the wrong number of axes.
    #[error("{op}: expected a rank-{expected} tensor, got rank {actual}")]
    Rank {
        op: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Scan-path construction or application failed.
    #[error("path error: {0}")]
    Path(String),

    #[error("numerical domain error: {0}")]
    Domain(String),

    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("usage error: {0}")]
    Usage(String),

    /// Input data violates a precondition (image size, mask values, ...).
    #[error("input error: {0}")]
    Input(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
