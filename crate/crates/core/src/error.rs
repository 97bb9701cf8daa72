use thiserror::Error;

/// Errors raised by model construction, solving and I/O.
#[derive(Debug, Error)]
pub enum FgbaError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("matrix is not a CTMC generator: column {column} sums to {sum:e}")]
    NotAGenerator { column: usize, sum: f64 },

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("unsupported mode: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FgbaError {
    pub fn domain(msg: impl Into<String>) -> Self {
        FgbaError::Domain(msg.into())
    }

    pub fn dims(expected: usize, actual: usize, context: &'static str) -> Self {
        FgbaError::DimensionMismatch {
            expected,
            actual,
            context,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            FgbaError::Config(_) | FgbaError::Parse { .. } => 2,
            FgbaError::Io(_) => 1,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, FgbaError>;
