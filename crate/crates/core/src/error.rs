use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no valid rows in input ({skipped} malformed; first at lines {first_lines:?})")]
    EmptyInput {
        skipped: usize,
        first_lines: Vec<usize>,
    },
    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),
    #[error("cluster count {k} outside [1, {n}]")]
    BadK { k: usize, n: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("state series of length {len} shorter than window length {window}")]
    SeriesTooShort { len: usize, window: usize },
    #[error("series of length {len} exceeds oracle limit {limit}")]
    TooLargeForOracle { len: usize, limit: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },
    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Stage name for errors raised inside a pipeline stage.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateInput(_) => "degenerate_input",
            Error::NonFiniteInput { .. } => "non_finite_input",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptyInput { .. } => "empty_input",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::BadK { .. } => "bad_k",
            Error::LengthMismatch(_) => "length_mismatch",
            Error::SeriesTooShort { .. } => "series_too_short",
            Error::TooLargeForOracle { .. } => "too_large_for_oracle",
            Error::InvalidParams(_) => "invalid_params",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Malformed { .. } => "malformed",
            Error::MissingInput(_) => "missing_input",
            Error::Io { .. } => "io",
            Error::Stage { source, .. } => source.kind(),
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
