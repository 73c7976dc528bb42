use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A dataset, marginal spec, or model refers to attributes that do not
    /// exist in (or disagree with) the schema at hand.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A privacy spend would push the accountant past its budget.
    /// Callers are expected to shrink the round, not retry.
    #[error("privacy budget exhausted: requested {requested}, remaining {remaining}")]
    BudgetExhausted { requested: f64, remaining: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A metric is undefined on the given data (e.g. an empty group).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
