use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    Empty,

    #[error("dataset needs at least 2 time points, got {0}")]
    TooShort(usize),

    #[error("row {row} has {found} columns, expected {expected}")]
    Ragged {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("index {value} ≥ alphabet {alphabet} at ({row},{col})")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        value: usize,
        alphabet: usize,
    },

    #[error("missing value at ({row},{col})")]
    MissingValue { row: usize, col: usize },

    #[error("alphabet size for series {series} is {size}, must be at least 2")]
    AlphabetTooSmall { series: usize, size: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("cannot project an empty vector")]
    EmptyVector,

    #[error("block {0} has zero Frobenius norm; group-lasso gradient undefined")]
    ZeroNorm(usize),

    #[error("problem has {n} variables, dense QP limit is {max}; use dykstra_project instead")]
    DimensionTooLarge { n: usize, max: usize },

    #[error("QP solver failed: {0}")]
    Qp(String),

    #[error("ground truth must contain at least one edge and one non-edge")]
    DegenerateTruth,

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
