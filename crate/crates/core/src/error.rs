use thiserror::Error;

pub type Result<T> = std::result::Result<T, SurvError>;

#[derive(Debug, Error)]
pub enum SurvError {
    /// A required column is missing or a cell could not be parsed.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dataset has no observed deaths")]
    NoDeaths,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A curve or loss would require log(0) or division by zero.
    #[error("degenerate value: {0}")]
    Degenerate(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Inverse-probability weight would be infinite.
    #[error("censoring survival estimate is zero at record {record} (time {time})")]
    WeightOverflow { record: usize, time: f64 },

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SurvError {
    pub fn validation(msg: impl Into<String>) -> Self {
        SurvError::Validation(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        SurvError::Degenerate(msg.into())
    }

    /// Numerical failures map to a different process exit code than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SurvError::Divergence { .. }
                | SurvError::Degenerate(_)
                | SurvError::WeightOverflow { .. }
        )
    }
}
