use thiserror::Error;

/// Errors produced by the explanation pipeline.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: sentiment {value} outside [-1, 1]")]
    SentimentRange { line: usize, value: f64 },

    #[error("line {line}: unknown {kind} `{id}`")]
    UnknownId {
        line: usize,
        kind: &'static str,
        id: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("training data has no positive interactions")]
    NoPositives,

    #[error("user {user} has {available} candidate items, need at least {needed}")]
    TooFewCandidates {
        user: usize,
        available: usize,
        needed: usize,
    },

    #[error("item {item} is not in the top-{k} list of user {user}")]
    NotRecommended { user: usize, item: usize, k: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("requested {size} aspects but only {available} exist")]
    SampleSize { size: usize, available: usize },

    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
