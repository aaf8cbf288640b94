use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("count matrix entry ({row}, {col}) is negative or non-finite: {value}")]
    InvalidCount { row: usize, col: usize, value: f64 },

    #[error("sample {row} has no positive counts")]
    EmptySample { row: usize },

    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("first design column must be all ones")]
    MissingIntercept,

    #[error("{what} failed to converge after {iterations} iterations (last value {last})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        last: f64,
    },

    #[error("non-finite log likelihood contribution at ({row}, {col})")]
    NumericOverflow { row: usize, col: usize },

    #[error("rank-one update denominator {denominator:e} is degenerate")]
    IllConditionedUpdate { denominator: f64 },

    #[error(
        "constrained fit did not reach feasibility in {iterations} outer iterations \
         (last residual {last_residual:e})"
    )]
    Infeasible {
        iterations: usize,
        last_residual: f64,
        residual_history: Vec<f64>,
        beta: Vec<f64>,
    },

    #[error("degenerate test: {0}")]
    DegenerateTest(String),
}
