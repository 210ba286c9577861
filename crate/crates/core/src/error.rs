//! Crate error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric literal could not be parsed as an exact rational.
    #[error("invalid number {0:?}: expected an integer, decimal, or `n/d` fraction")]
    InvalidNumber(String),

    /// A domain invariant was violated (bad config, bad record, bad field).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A usage record or data file failed validation.
    #[error("invalid record: {0}")]
    InvalidRecord(String),

    /// No experience records exist for the requested tool.
    #[error("no experience records for tool {tool_id:?}")]
    EmptyExperience { tool_id: String },

    /// The budget is already exhausted by fixed overhead; no plan is possible.
    #[error("budget exhausted: capacity after overhead is {capacity} (must be positive)")]
    BudgetExhausted { capacity: String },

    /// Quantization would overflow the integer range.
    #[error("quantization overflow: {0}")]
    QuantizationOverflow(String),

    /// Records for one (query, tool) pair disagree on the per-episode count.
    #[error(
        "inconsistent count_in_episode for query {query_id:?} tool {tool_id:?}: {existing} vs {incoming}"
    )]
    InconsistentEpisodeCount {
        query_id: String,
        tool_id: String,
        existing: u32,
        incoming: u32,
    },

    /// A generated scenario admits no resolvable query.
    #[error("degenerate scenario: {0}")]
    DegenerateScenario(String),

    /// Metric computation over an empty batch.
    #[error("cannot compute metrics over an empty transcript batch")]
    EmptyBatch,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn invalid_record(msg: impl Into<String>) -> Self {
        Error::InvalidRecord(msg.into())
    }
}
