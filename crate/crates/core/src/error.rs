use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the mapping toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters: zero dimensions, even kernel size, bad thresholds.
    #[error("configuration error: {0}")]
    Config(String),

    /// The requested allocation exceeds the configured memory cap.
    #[error("resource error: {0}")]
    Resource(String),

    /// A zero-length or non-finite ray direction.
    #[error("invalid direction: {0}")]
    InvalidDirection(String),

    /// Unknown or malformed input file.
    #[error("format error: {0}")]
    Format(String),

    /// Truncated or inconsistent binary payload, or a corrupted voxel record.
    #[error("corruption error: {0}")]
    Corruption(String),

    /// Metrics could not be computed (empty inputs, degenerate mesh).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
