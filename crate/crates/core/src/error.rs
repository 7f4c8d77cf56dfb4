use std::path::PathBuf;

use thiserror::Error;

/// Broad failure category, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        msg: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("class {label} has no samples; widen or move the Tg band")]
    EmptyClass { label: u8 },

    #[error("grid would produce {count} candidates, above the cap of {cap}; use a coarser step or a smaller max_nonzero")]
    GridTooLarge { count: u128, cap: u64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("batch of size {0} is too small for train-mode batch normalization (need at least 2)")]
    BatchTooSmall(usize),

    #[error("checkpoint format mismatch: expected magic {expected:?}, found {found:?}")]
    CheckpointVersion { expected: String, found: String },

    #[error("corrupted checkpoint: {0}")]
    CheckpointCorrupt(String),

    #[error("checkpoint checksum mismatch")]
    CheckpointChecksum,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::NonFinite(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
