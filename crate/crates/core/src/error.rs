use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("domain is unbounded and has no finite diameter")]
    NoFiniteDiameter,

    #[error("invalid compressor: {0}")]
    InvalidCompressor(String),

    #[error("switch weight {0} outside [0, 1]")]
    InvalidWeight(f64),

    #[error("cannot sample {m} of {n} clients")]
    Sampling { n: usize, m: usize },

    #[error("partition error: {0}")]
    Partition(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("{path}:{row}:{column}: {message}")]
    Dataset {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("dataset {path}: {message}")]
    DatasetShape { path: PathBuf, message: String },

    #[error("run diverged at round {round}, client {client}: {what}")]
    Diverged { round: usize, client: usize, what: String },

    #[error("invalid round configuration: {0}")]
    InvalidConfig(String),

    #[error("the feasible-round set A is empty")]
    EmptyFeasibleSet,

    #[error("all averaging weights are zero")]
    ZeroWeights,

    #[error("soft averaging needs exact g(w_t); the trace used partial participation")]
    SoftAveragingNeedsFullParticipation,

    #[error("snapshot for round {0} was thinned out of the trace")]
    MissingSnapshot(usize),

    #[error("no feasible grid point (g <= 0) found")]
    NoFeasiblePoint,

    #[error("grid oracle supports d <= 3, got d = {0}")]
    GridTooLarge(usize),

    #[error("theorem inputs: {0}")]
    TheoremInputs(String),

    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
