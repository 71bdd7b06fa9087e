use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("observation {0} has an empty chosen set")]
    EmptyChoiceSet(usize),

    #[error("objects {0} and {1} have identical feature rows")]
    DuplicateObject(usize, usize),

    #[error("observation {observation} references object {index}, but the table has {len} objects")]
    IndexOutOfRange {
        observation: usize,
        index: usize,
        len: usize,
    },

    #[error("observation {observation}: {reason}")]
    InvalidObservation { observation: usize, reason: String },

    #[error("invalid object table: {0}")]
    InvalidObjects(String),

    #[error("cholesky factorization failed (jitter escalated to {jitter:e})")]
    FactorizationFailure { jitter: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("rows {0} and {1} have identical utilities")]
    TieDetected(usize, usize),

    #[error("majority vote is split between objects {0} and {1}")]
    MajorityTie(usize, usize),

    #[error("input outside the unit hypercube: {0}")]
    DomainViolation(String),

    #[error("importance weights are all equal")]
    DegenerateWeights,

    #[error("tail has {0} samples, at least 5 are needed")]
    InsufficientTail(usize),

    #[error("test set has no chosen objects")]
    NoPositives,

    #[error("test set has no rejected objects")]
    NoNegatives,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
