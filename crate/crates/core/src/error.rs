use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("nonpositive time {value} in row {row}")]
    NonpositiveTime { row: usize, value: f64 },

    #[error("invalid event indicator '{value}' in row {row}")]
    InvalidEventIndicator { row: usize, value: String },

    #[error("unknown category code {value} in column '{column}' (levels: {levels})")]
    UnknownCategory {
        column: String,
        value: f64,
        levels: u32,
    },

    #[error("missing or non-finite value in column '{column}', row {row}")]
    MissingValue { column: String, row: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("tau must lie strictly between 0 and 1, got {0}")]
    InvalidTau(f64),

    #[error("row {0} is in-bag for every tree; increase n_trees")]
    NeverOob(usize),

    #[error("operation requires a {expected} forest")]
    TaskMismatch { expected: &'static str },

    #[error("survival data contains no events")]
    NoEvents,

    #[error("no comparable pairs for concordance")]
    NoComparablePairs,

    #[error("empty grid")]
    EmptyGrid,

    #[error("every grid point failed: {0}")]
    AllCandidatesFailed(String),

    #[error("{0}")]
    Empty(String),

    #[error("calibration search failed: {0}")]
    Search(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
