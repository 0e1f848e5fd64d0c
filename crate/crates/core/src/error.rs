//! Error type shared by all modules.

use thiserror::Error;

/// Errors raised by model construction, likelihood evaluation, solving,
/// detection and the brute-force oracle.
#[derive(Debug, Error)]
pub enum Error {
    /// The model violates one or more type invariants.
    #[error("invalid model: {}", .0.join("; "))]
    InvalidModel(Vec<String>),

    /// A state label that is not a member of the model's state set.
    #[error("unknown state label {label:?}{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    UnknownState {
        label: String,
        context: Option<String>,
    },

    /// The observed window has probability zero under every change-time
    /// hypothesis; the stream cannot have been produced by the model.
    #[error("impossible path: {0}")]
    ImpossiblePath(String),

    /// Runtime-detectable API misuse (index misalignment, push after stop,
    /// out-of-range arguments).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A threshold table that does not belong to the model it is used with.
    #[error("model/table mismatch: {0}")]
    TableMismatch(String),

    /// An enumeration or table would exceed the configured memory budget.
    #[error("memory budget exceeded: requires ~{required_mb} MB, budget is {budget_mb} MB (set DISORDER_DETECT_BUDGET_MB to raise)")]
    BudgetExceeded { required_mb: u64, budget_mb: u64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input file or stream.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
