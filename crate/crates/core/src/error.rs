//! Crate-wide error type.

use std::path::PathBuf;

/// Coarse classification used by the command-line front end to pick an exit
/// status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Caller supplied an invalid argument or configuration.
    Usage,
    /// Input data failed validation (bundle, model or report files).
    Data,
    /// A numeric routine produced a non-finite value.
    Numeric,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("magic mismatch in {path}: expected \"CMAP\"")]
    MagicMismatch { path: PathBuf },

    #[error("unsupported format version {found} in {path}")]
    UnsupportedVersion { path: PathBuf, found: u32 },

    #[error("truncated matrix file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    DimensionMismatch {
        field: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in `{field}` at row {row}, column {col}")]
    NonFinite {
        field: String,
        row: usize,
        col: usize,
    },

    #[error("non-binary value {value} in `{field}` at row {row}, column {col}")]
    NonBinary {
        field: String,
        row: usize,
        col: usize,
        value: u8,
    },

    #[error("duplicate name `{name}` in `{field}`")]
    DuplicateName { field: String, name: String },

    #[error("index {index} out of range in `{field}` (bound {bound})")]
    IndexOutOfRange {
        field: String,
        index: usize,
        bound: usize,
    },

    #[error("invalid data in `{field}`: {reason}")]
    InvalidData { field: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered during {0}")]
    NonFiniteResult(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::NonFiniteResult(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidData {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
