use std::path::PathBuf;

use chrono::NaiveDate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or configuration.
    Validation,
    /// Input data is missing, malformed, or incomplete.
    Data,
    /// Model training failed.
    Training,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: header mismatch: expected `{expected}`, found `{found}`")]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{path}:{line}: {message}")]
    Row {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}:{line}: duplicate date {date}")]
    DuplicateDate {
        path: PathBuf,
        line: u64,
        date: NaiveDate,
    },

    #[error("record for {date} violates invariant: {message}")]
    Invariant { date: NaiveDate, message: String },

    #[error("unresolved gaps in merged series: {}", format_days(.days))]
    Gaps { days: Vec<NaiveDate> },

    #[error("source `{source_name}` failed: {message}")]
    Source {
        source_name: String,
        message: String,
    },

    #[error("source `{source_name}` returned a partial span: {got} of {expected} days")]
    PartialSpan {
        source_name: String,
        expected: usize,
        got: usize,
    },

    #[error("missing input for {what}: {message}")]
    MissingData { what: String, message: String },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("non-finite input value at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("non-finite training loss at epoch {epoch}, batch {batch} (loss = {loss})")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("boosting round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("variety {variety}: {source}")]
    Variety {
        variety: String,
        #[source]
        source: Box<Error>,
    },

    #[error("bundle format: {0}")]
    Format(String),

    #[error("i/o on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) | Error::Shape { .. } => ErrorClass::Validation,
            Error::EmptyTrainingSet | Error::NonFiniteLoss { .. } | Error::Round { .. } => {
                ErrorClass::Training
            }
            Error::Variety { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}

fn format_days(days: &[NaiveDate]) -> String {
    const SHOWN: usize = 10;
    let mut s = days
        .iter()
        .take(SHOWN)
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    if days.len() > SHOWN {
        s.push_str(&format!(" (+{} more)", days.len() - SHOWN));
    }
    s
}
