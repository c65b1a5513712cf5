use thiserror::Error;

/// Errors produced by simulation, mask construction and reconstruction.
#[derive(Error, Debug)]
pub enum Error {
    /// Invalid phantom or campaign configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Mismatched array dimensions between operands.
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    /// Out-of-range or otherwise invalid parameter.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A shift ensemble was asked for more positions than the mask supports.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// An operation that needs data received none (or too little).
    #[error("empty data: {0}")]
    EmptyData(String),

    /// Iterative solver residual grew for several consecutive iterations.
    #[error("solver diverged at iteration {iteration}: {suggestion}")]
    Divergence { iteration: usize, suggestion: String },

    /// Numerical breakdown inside a solver (e.g. zero curvature in CG).
    #[error("solver breakdown at iteration {iteration}: {message}")]
    Solver { iteration: usize, message: String },

    /// A log-domain residual hit a non-positive correlation value.
    #[error("domain error at angle {angle_index}, pixel ({row}, {col}): {message}")]
    Domain {
        angle_index: usize,
        row: usize,
        col: usize,
        message: String,
    },

    /// Metric normalization is undefined for the given input.
    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("file format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
