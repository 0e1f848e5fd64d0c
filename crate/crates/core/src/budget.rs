//! Memory budget for exhaustive enumerations and threshold tables.

/// Default budget when `DISORDER_DETECT_BUDGET_MB` is unset.
pub const DEFAULT_BUDGET_MB: u64 = 512;

/// Memory budget in megabytes, read from `DISORDER_DETECT_BUDGET_MB`.
///
/// Unset or unparsable values fall back to [`DEFAULT_BUDGET_MB`].
pub fn memory_budget_mb() -> u64 {
    std::env::var("DISORDER_DETECT_BUDGET_MB")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_BUDGET_MB)
}

/// Rounds a byte requirement up to whole megabytes.
pub(crate) fn bytes_to_mb(bytes: u128) -> u64 {
    bytes.div_ceil(1024 * 1024).min(u64::MAX as u128) as u64
}
