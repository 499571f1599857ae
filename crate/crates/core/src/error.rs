use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("expected {expected} actions (one per robot), got {got}")]
    ActionCount { expected: usize, got: usize },

    #[error("grid shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("history mismatch: {0}")]
    History(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("malformed record: {0}")]
    MalformedRecord(String),

    #[error("prediction failed: {0}")]
    Prediction(String),

    #[error("episode {scenario} (seed {seed}) step {step}: {source}")]
    Episode {
        scenario: String,
        seed: u64,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("output: {0}")]
    Output(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
