use thiserror::Error;

/// Errors surfaced by simulator components. Most protocol-level failures
/// (aborts, read denials) are ordinary return values, not errors; this enum
/// covers misuse and configuration problems.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),

    #[error("unknown fault target: {0}")]
    UnknownFaultTarget(String),

    #[error("scheduling into the past: now={now} requested={requested}")]
    SchedulePast { now: u64, requested: u64 },

    #[error("transition already in progress")]
    TransitionInProgress,

    #[error("transition direction does not match current mode: {0}")]
    TransitionMode(String),

    #[error("malformed redo record: {0}")]
    RedoDecode(String),

    #[error("history decode error at line {line}: {msg}")]
    HistoryDecode { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl SimError {
    pub fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }
}
