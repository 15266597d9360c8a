use std::path::PathBuf;

use thiserror::Error;

/// Parse failures for the FVEC1 binary format. Every variant carries the byte
/// offset at which the problem was detected.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FvecError {
    #[error("bad magic at byte {offset}: expected \"FVEC1\"")]
    BadMagic { offset: usize },
    #[error("zero dimension in header at byte {offset}")]
    ZeroDim { offset: usize },
    #[error("zero vector count in header at byte {offset}")]
    ZeroCount { offset: usize },
    #[error("truncated payload at byte {offset}: expected {expected} bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value {value} at byte {offset}")]
    NonFinite { offset: usize, value: f32 },
    #[error("{extra} trailing bytes after payload at byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Fvec {
        path: PathBuf,
        #[source]
        source: FvecError,
    },
    #[error(transparent)]
    FvecData(#[from] FvecError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("training diverged: {0}")]
    Training(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures of the underlying filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
