use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar input was NaN or infinite where a finite value is required.
    #[error("non-finite input to {op}: {value}")]
    NonFinite { op: &'static str, value: f64 },

    /// A structurally invalid argument (bad range, bad enum combination, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Vector/matrix shape disagreement.
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    /// Support function of an unbounded set.
    #[error("support function is unbounded for full_space")]
    Unbounded,

    /// Degenerate input that makes the requested statistic meaningless.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Loss calibration is impossible for the given inputs.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// A numeric failure inside an iterative routine (overflow, NaN, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Configuration file or override errors.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code for the CLI: 2 for configuration problems,
    /// 3 for numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) | Error::InvalidArgument(_) => 2,
            Error::Numeric(_) | Error::NonFinite { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
