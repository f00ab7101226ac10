use thiserror::Error;

use crate::transport::Coupling;

/// Errors produced by the fairalign library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value at row {row}, column {column}")]
    NonNumeric { row: usize, column: String },

    #[error("fewer than two protected groups")]
    TooFewGroups,

    #[error("protected group {0} is empty")]
    EmptyGroup(usize),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("all feature columns are constant")]
    AllColumnsConstant,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mean rejection sampling exceeded {0} attempts; try a larger mean_range")]
    MeanSamplingExhausted(usize),

    #[error("transport simplex hit the pivot cap ({pivots}) without an optimality certificate")]
    SolverIterationCap { pivots: usize, best: Box<Coupling> },

    #[error("sinkhorn scaling underflowed at lambda = {0}; use a larger lambda")]
    SinkhornUnderflow(f64),

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("partition block {block}: {source}")]
    Block {
        block: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("outer iteration {iter}: {source}")]
    Iteration {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("kmeans++ needs {k} distinct positively weighted points, found {found}")]
    NotEnoughPoints { k: usize, found: usize },

    #[error("assignment row {row} has mass {mass} after scaling")]
    InconsistentAssignment { row: usize, mass: f64 },

    #[error("silhouette needs at least two clusters")]
    SilhouetteNeedsTwoClusters,

    #[error("oracle size cap exceeded: {0}")]
    OracleCap(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
