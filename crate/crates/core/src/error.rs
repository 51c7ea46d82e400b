use thiserror::Error;

use crate::solver::TraceRow;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("agent {agent} has an infinite disutility for chore {chore}")]
    InfiniteDisutility { agent: usize, chore: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("negative bundle entry {value} at coordinate {index}")]
    NegativeInput { index: usize, value: f64 },

    #[error("gradient is undefined at the zero bundle")]
    GradientSingularity,

    #[error("{what} stalled after {iterations} iterations (residual {residual:e})")]
    SolverStall {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("query and nearest point coincide; no separating direction")]
    DegenerateDirection,

    #[error("hyperplane normal has a non-positive entry at {0}")]
    ZeroNormalEntry(usize),

    #[error("non-positive entry {value} at {index}")]
    NonpositiveEntry { index: usize, value: f64 },

    #[error("iteration cap {cap} exceeded")]
    IterationCapExceeded { cap: usize, trace: Vec<TraceRow> },

    #[error("allocation recovery failed (residual {residual:e})")]
    InfeasibleRecovery { residual: f64 },

    #[error("price vector is identically zero")]
    ZeroPrices,

    #[error("chore {0} is not allocated to anyone")]
    ZeroColumn(usize),

    #[error("initial point search failed after {0} bisection steps")]
    SearchFailed(usize),

    #[error("grid of {points} points exceeds the cap of {cap}")]
    GridTooLarge { points: f64, cap: f64 },

    #[error("unsupported dimensions: {0}")]
    UnsupportedDims(String),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("early-stop branch taken on the first iteration")]
    EarlyBranchAtStart,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
