use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate date {0}")]
    DuplicateDate(String),

    #[error("row {row}, column {column}: cannot parse {value:?} as a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: cannot parse date {value:?}")]
    BadDate { row: usize, value: String },

    #[error("malformed table: {0}")]
    MalformedTable(String),

    #[error("window [{start}, {end}] lies outside the panel (0..{len})")]
    WindowOutOfRange { start: i64, end: i64, len: usize },

    #[error("insufficient data: need at least {required}, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error(
        "insufficient history: requested {requested} window pairs, only {achievable} achievable"
    )]
    InsufficientHistory { requested: usize, achievable: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cannot draw {requested} ids from a pool of {available}")]
    PoolTooSmall { requested: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("singular correlation target")]
    SingularTarget,

    #[error("non-positive budget curvature")]
    NonPositiveCurvature,

    #[error("long-only solver did not converge after {iterations} iterations (KKT residual {kkt_residual:e})")]
    NoConvergence {
        iterations: usize,
        kkt_residual: f64,
        best: Vec<f64>,
    },

    #[error("id sets differ")]
    IdMismatch,

    #[error("portfolio bankrupt")]
    Bankrupt,

    #[error("estimation failed on {date} for {method}: {source}")]
    Estimation {
        date: String,
        method: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
