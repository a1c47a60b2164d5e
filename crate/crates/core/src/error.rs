use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("water-filling has no feasible allocation: every gain is zero")]
    NoFeasibleAllocation,

    #[error("entry ({row}, {col}) is zero and has no phase")]
    DegeneratePhase { row: usize, col: usize },

    #[error("ill-conditioned RF stage: {0}")]
    IllConditioned(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("instance too large for exhaustive search: {count} candidates (limit {limit})")]
    TooLarge { count: u128, limit: u128 },

    #[error("numerical routine did not converge: {0}")]
    NoConvergence(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
