use thiserror::Error;

/// Errors surfaced by simulator operations.
#[derive(Debug, Error)]
pub enum SimError {
    /// Invalid configuration: bad geometry, pad budget below the worst case, ...
    #[error("config error: {0}")]
    Config(String),
    /// An operation was applied to a state that cannot support it.
    #[error("contract violation: {0}")]
    Contract(String),
    /// The fence ran longer than its padding budget.
    #[error("pad overrun: raw {raw} cycles exceed pad target {target}")]
    PadOverrun { raw: u64, target: u64 },
    /// Register rename was requested with an empty free list.
    #[error("allocation stall: rename free list is empty")]
    AllocStall,
    /// Malformed channel-matrix CSV.
    #[error("csv error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, SimError>;
