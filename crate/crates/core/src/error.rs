use thiserror::Error;

/// Violations of the dataset and tuple invariants.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("trajectory has {tuples} tuples but {records} feedback records")]
    Alignment { tuples: usize, records: usize },
    #[error("{kind} tuple must carry reward {expected}, got {actual}")]
    RewardKind {
        kind: &'static str,
        expected: i8,
        actual: i8,
    },
    #[error("action {action} is out of range for {candidates} candidates")]
    ActionOutOfRange { action: usize, candidates: usize },
    #[error("observation has {len} features, not a multiple of {candidates} candidates")]
    ObservationShape { len: usize, candidates: usize },
    #[error("update count {k} precedes the last recorded update count {last}")]
    UpdateOrder { k: u64, last: u64 },
    #[error("uncertainty {0} is outside [0, 1]")]
    Uncertainty(f64),
    #[error("invalid reward value {0}")]
    RewardValue(i64),
    #[error("unqueried record must have reward 0")]
    UnqueriedReward,
    #[error("the dataset is empty")]
    Empty,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Protocol(#[from] crate::fier::ProtocolError),
    #[error(transparent)]
    Env(#[from] crate::fier::EnvError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}
