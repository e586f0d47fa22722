use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not symmetric at ({i}, {j})")]
    Asymmetric { i: usize, j: usize },

    #[error("degenerate weight: {0} (every sample received zero weight)")]
    DegenerateWeight(&'static str),

    #[error("empty {0} dataset")]
    EmptyDataset(&'static str),

    #[error(
        "hessian of dimension {d} exceeds the limit {limit}; use gradient-only paths or raise the limit"
    )]
    HessianTooLarge { d: usize, limit: usize },

    #[error("matrix is not positive definite: cholesky pivot {pivot} is {value}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("infeasible design: {0}")]
    InfeasibleDesign(String),

    #[error("contamination count eps * n = {eps} * {n} is not an integer (enable round mode to allow rounding)")]
    NonIntegralContamination { eps: f64, n: f64 },

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub type Result<T> = std::result::Result<T, Error>;
