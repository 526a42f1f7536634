use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Validation,
    Config,
    Numeric,
    Format,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("ill-conditioned system: {0}")]
    Conditioning(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("bad magic bytes: expected {expected:?}")]
    Magic { expected: [u8; 4] },
    #[error("size mismatch for `{name}`: declared {declared} bytes, expected {expected}")]
    SizeMismatch {
        name: String,
        declared: u64,
        expected: u64,
    },
    #[error("truncated data: `{name}` needs {needed} bytes, only {available} available")]
    Truncated {
        name: String,
        needed: u64,
        available: u64,
    },
    #[error("structural error: {0}")]
    Structure(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("while evaluating config {config}: {source}")]
    AtConfig {
        config: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::Validation(_) | Error::Dimension(_) => ErrorClass::Validation,
            Error::Config(_) => ErrorClass::Config,
            Error::Numeric(_) | Error::Conditioning(_) => ErrorClass::Numeric,
            Error::Version { .. }
            | Error::Magic { .. }
            | Error::SizeMismatch { .. }
            | Error::Truncated { .. }
            | Error::Structure(_)
            | Error::Manifest(_) => ErrorClass::Format,
            Error::AtConfig { source, .. } => source.class(),
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
