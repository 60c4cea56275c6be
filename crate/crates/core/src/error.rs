use std::path::PathBuf;

/// Errors produced by the segmentation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A file could not be read, written or decoded.
    #[error("i/o error on {path}: {reason}")]
    Io { path: PathBuf, reason: String },

    /// The file decoded, but its pixel layout is not supported.
    #[error("unsupported format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input has too little structure for the requested clustering.
    #[error("degenerate input: found {found} distinct intensities, need at least {needed}")]
    Degenerate { found: usize, needed: usize },

    #[error("centroid record {0} has an empty foreground pool and cannot be prompted")]
    UnusableRecord(usize),

    #[error("invalid centroid store: {0}")]
    Store(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("synthetic generation failed: {0}")]
    Generation(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Io {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
