use std::path::PathBuf;

/// Errors produced across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("block assembly failed: {0}")]
    Assembly(String),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("underdetermined variable {0}: attached only to a single branch factor")]
    UnderdeterminedVariable(usize),

    #[error("missing message for tie edge (factor {factor}, variable {variable})")]
    MissingTieMessage { factor: usize, variable: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error("iteration limit exceeded: {0}")]
    IterationLimit(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("unknown factor id {0}")]
    UnknownFactor(usize),

    #[error("invalid aging model: {0}")]
    InvalidAging(String),

    #[error("time {t} precedes arrival {arrival}")]
    TimeBeforeArrival { t: f64, arrival: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
