use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("design matrix is rank deficient at column {column} ({name})")]
    Singular { column: usize, name: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("cannot enroll {requested} plots from a population of {available}")]
    Enrollment { requested: usize, available: usize },

    #[error("invalid design: {0}")]
    Design(String),

    #[error("assignment enumeration limited to n <= {limit}, got n = {n}")]
    SizeLimit { n: usize, limit: usize },

    #[error("per-arm fit failed for arm {arm}: {reason}")]
    ArmFit { arm: usize, reason: String },

    #[error("budget {budget} is infeasible: the cheapest regime costs {cheapest}")]
    Infeasible { budget: f64, cheapest: f64 },

    #[error("scenario {scenario} aborted: {failed} of {total} replicates failed")]
    ScenarioAbort {
        scenario: String,
        failed: usize,
        total: usize,
    },

    #[error("malformed input: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}
