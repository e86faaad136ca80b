use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse failure: {0}")]
    Csv(#[from] csv::Error),

    #[error("response column '{0}' not found in header")]
    UnknownResponseColumn(String),

    #[error("non-numeric cell '{value}' at data row {row}, column '{column}'")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("non-finite value at data row {row}, column '{column}'")]
    NonFiniteValue { row: usize, column: String },

    #[error("duplicate feature name '{0}'")]
    DuplicateFeatureName(String),

    #[error("table is empty")]
    EmptyTable,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("feature vector has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("no tree has out-of-bag rows; cannot estimate out-of-bag error")]
    NoOutOfBagRows,

    #[error("output variance is zero; sensitivity indices are undefined")]
    ZeroOutputVariance,

    #[error("fit measure is constant over the sampled subsets; total indices are undefined")]
    DegenerateSubsetVariance,

    #[error("unknown scenario '{0}' (expected 1, 2 or 3)")]
    UnknownScenario(String),

    #[error("unknown test function '{0}'")]
    UnknownTestFunction(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
