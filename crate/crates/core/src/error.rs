use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// What went wrong while decoding a dataset or checkpoint file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    BadMagic,
    Truncated,
    LabelOutOfRange,
    Malformed,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("stability violation: ratio {ratio:.6} exceeds 1 (dt*(ax1+ax2)/dx^2 + dt*(ay1+ay2)/dy^2)")]
    Stability { ratio: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("parse error in {path}: {kind:?} at byte offset {offset}: {detail}")]
    Parse {
        path: PathBuf,
        offset: u64,
        kind: ParseErrorKind,
        detail: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error classes; the CLI maps each to its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Config,
    Io,
    Numeric,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Usage(_) => ErrorCategory::Usage,
            Error::Shape { .. } | Error::Config(_) => ErrorCategory::Config,
            Error::Io { .. } | Error::Parse { .. } => ErrorCategory::Io,
            Error::Stability { .. } | Error::Numeric(_) => ErrorCategory::Numeric,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
