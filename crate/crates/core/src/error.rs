use thiserror::Error;

/// Errors produced by the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    /// A required CSV column is missing or the header is unreadable.
    #[error("schema error: {0}")]
    Schema(String),

    /// A parameter is outside its legal domain (even smoothing window, K = 0, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Input data violates a precondition of the operation.
    #[error("data error: {0}")]
    Data(String),

    /// A window or segment has too few points to compute features.
    #[error("degenerate window: need at least {needed} points, got {got}")]
    Degenerate { needed: usize, got: usize },

    /// Operation called outside its contract (e.g. turn status of a stopped segment).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Feature width does not match the model input width.
    #[error("width mismatch: expected {expected}, got {got}")]
    Width { expected: usize, got: usize },

    /// Non-finite loss or weights during training.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
