use std::fmt;

use thiserror::Error;

/// Which stochastic table a validation failure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Transition,
    Observation,
    Initial,
}

impl fmt::Display for RowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowKind::Transition => write!(f, "transition"),
            RowKind::Observation => write!(f, "observation"),
            RowKind::Initial => write!(f, "initial"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind} row {index:?} sums to {sum}, expected 1")]
    NonStochasticRow {
        kind: RowKind,
        index: Vec<usize>,
        sum: f64,
    },

    #[error("negative probability {value} in {kind} table at {index:?}")]
    NegativeProbability {
        kind: RowKind,
        index: Vec<usize>,
        value: f64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("id out of range: {0}")]
    OutOfRange(String),

    #[error("observation {obs} has zero probability under the current belief")]
    ZeroProbabilityObservation { obs: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    #[error("need at least 2 trajectories, got {0}")]
    TooFewTrajectories(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid mapping descriptor `{0}`")]
    InvalidDescriptor(String),

    #[error("state space of {size} exceeds the enumeration cap {cap}")]
    StateSpaceTooLarge { size: usize, cap: usize },

    #[error("horizon {horizon} needs {size} histories, cap is {cap}")]
    HorizonTooLarge {
        horizon: usize,
        size: usize,
        cap: usize,
    },

    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),

    #[error("discount factor {0} outside [0, 1)")]
    GammaOutOfRange(f64),

    #[error("confidence parameter delta = {0} outside (0, 1)")]
    InvalidDelta(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
