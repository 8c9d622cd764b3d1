use std::path::PathBuf;

use thiserror::Error;

use crate::nn::ParamVector;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input has dimension {actual}, model expects {expected}")]
    InputShape { expected: usize, actual: usize },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("parameter layout mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid skew {skew} for {clients} clients: majority share must exceed the minority share")]
    InvalidSkew { skew: f64, clients: usize },

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("dataset format error: {0}")]
    Format(String),

    #[error("dataset consistency error: {0}")]
    Consistency(String),

    #[error("client {client} has an empty shard")]
    EmptyShard { client: usize },

    #[error("client {client} diverged: {reason}")]
    ClientDivergence { client: usize, reason: String },

    #[error("no participating clients")]
    NoParticipants,

    #[error("client {client} reported an invalid loss {loss}")]
    InvalidLoss { client: usize, loss: f64 },

    #[error("alpha {0} outside [0, 1)")]
    InvalidAlpha(f64),

    #[error("khat {khat} exceeds floor({participants}/2)")]
    KhatConstraint { khat: usize, participants: usize },

    #[error("variance needs at least two clients, got {0}")]
    UndefinedVariance(usize),

    #[error("empty evaluation set")]
    EmptyEvalSet,

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("aggregate diverged at round {round}")]
    Divergence {
        round: usize,
        last_good: Box<ParamVector>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Round { source, .. } => source.exit_code(),
            Error::Divergence { .. } | Error::ClientDivergence { .. } | Error::Numeric(_) => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}
