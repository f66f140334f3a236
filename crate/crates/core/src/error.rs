use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is below the zero threshold")]
    ZeroVector { norm: f64 },

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("objective returned a non-finite value while probing coordinate {coordinate}")]
    NonFiniteEvaluation { coordinate: usize },

    #[error("center optimization did not converge: gradient norm {grad_norm:e} after {iterations} iterations")]
    NotConverged { grad_norm: f64, iterations: usize },

    #[error("batch mean of class {class} is degenerate (feature sum norm {norm:e})")]
    DegenerateBatchMean { class: usize, norm: f64 },

    #[error("empirical means not initialized for classes {missing:?}")]
    UninitializedMeans { missing: Vec<usize> },

    #[error("batch has {n} features, at least 2 are required")]
    BatchTooSmall { n: usize },

    #[error("iteration {t} outside schedule range [0, {total}]")]
    OutOfRange { t: u64, total: u64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("infeasible scene profile: {0}")]
    InfeasibleProfile(String),

    #[error("pool of {pool} samples cannot supply {requested} mined views")]
    PoolTooSmall { pool: usize, requested: usize },

    #[error("mask for class {class} is empty")]
    EmptyMask { class: usize },

    #[error("class {class} has no pixels in the evaluation set")]
    MissingClass { class: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
