use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by who is at fault: the caller ([`Error::Usage`],
/// [`Error::Config`], [`Error::Shape`]), the input data ([`Error::Data`],
/// [`Error::Format`], [`Error::Checkpoint`]), or the numerics
/// ([`Error::NonFinite`], [`Error::Precision`]). The CLI maps these groups
/// onto exit codes through [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("precision error: {0}")]
    Precision(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Shape(_) | Error::Config(_) | Error::Usage(_) | Error::Precision(_) => {
                ErrorCategory::Usage
            }
            Error::Data(_)
            | Error::Format(_)
            | Error::Checkpoint(_)
            | Error::Evaluation(_)
            | Error::Io { .. }
            | Error::Json(_) => ErrorCategory::Data,
            Error::Training(_) | Error::NonFinite { .. } => ErrorCategory::Numeric,
        }
    }
}

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(format!($($arg)*)))
    };
}
pub(crate) use bail;
