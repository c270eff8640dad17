use thiserror::Error;

use crate::fairtrain::TraceRecord;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes, used by callers that map errors onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical divergence: {context}")]
    Divergence {
        context: String,
        /// Training trace up to the failing round, when the failure happened inside a fit.
        trace: Vec<TraceRecord>,
    },

    #[error("degenerate sensitive attribute: {0}")]
    DegenerateAttribute(String),

    #[error("covariance is undefined for {rows} row(s); need at least 2")]
    UndefinedCovariance { rows: usize },

    #[error("split error: {0}")]
    Split(String),

    #[error("calibration data has no rows for group {group}")]
    MissingGroup { group: u8 },

    #[error("ingestion error at row {row}, column '{column}': {message}")]
    Ingest {
        row: usize,
        column: String,
        message: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn divergence(context: impl Into<String>) -> Self {
        Error::Divergence {
            context: context.into(),
            trace: Vec::new(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Shape { .. } => ErrorClass::Config,
            Error::Divergence { .. } => ErrorClass::Numerical,
            Error::Io(_) => ErrorClass::Io,
            Error::DegenerateAttribute(_)
            | Error::UndefinedCovariance { .. }
            | Error::Split(_)
            | Error::MissingGroup { .. }
            | Error::Ingest { .. }
            | Error::EmptyInput(_)
            | Error::Schema(_)
            | Error::Checkpoint(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Data,
        }
    }
}
