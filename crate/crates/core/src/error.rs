use thiserror::Error;

pub type Result<T, E = FlockError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FlockError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("agent pair ({0}, {0}) is not a distinct pair")]
    SameAgent(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("agents {i} and {j} at squared distance {dist_sq} inside the singular region (d0 = {d0})")]
    SingularDomain { i: usize, j: usize, dist_sq: f64, d0: f64 },

    #[error("internal dynamics undefined at agent {agent}")]
    OutsideDomain { agent: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
