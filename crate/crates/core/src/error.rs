use std::path::PathBuf;

use thiserror::Error;

use crate::ingest::IngestError;
use crate::metrics::MetricError;
use crate::vlm::VlmError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A string that could not be read as the named kind of value.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {kind}: {value:?}")]
pub struct ParseValueError {
    pub kind: &'static str,
    pub value: String,
}

impl ParseValueError {
    pub fn new(kind: &'static str, value: impl Into<String>) -> Self {
        Self { kind, value: value.into() }
    }
}

/// Broad failure class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Backend,
    Extraction,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Parse(#[from] ParseValueError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Vlm(#[from] VlmError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv { path: path.into(), source }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Invalid(_) | Error::Parse(_) | Error::Metric(_) | Error::Csv { .. } | Error::Json { .. } => {
                ErrorCategory::Input
            }
            Error::Vlm(_) => ErrorCategory::Backend,
            Error::Ingest(IngestError::Io { .. }) | Error::Io { .. } => ErrorCategory::Io,
            Error::Ingest(IngestError::Extraction { .. }) => ErrorCategory::Extraction,
            Error::Ingest(_) => ErrorCategory::Input,
        }
    }
}
