use crate::margin::MarginResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dataset generation failed: {0}")]
    Generation(String),

    #[error("parse error at line {line}{}: {message}", field.map(|f| format!(", field {f}")).unwrap_or_default())]
    Parse {
        line: u64,
        field: Option<usize>,
        message: String,
    },

    /// The dual solver ran out of iterations; `best` is the last iterate.
    #[error("margin solver did not converge after {iterations} iterations (gap {gap:e})")]
    Convergence {
        iterations: usize,
        gap: f64,
        best: Box<MarginResult>,
    },

    #[error("subset enumeration over {positives} positives exceeds the cap of {cap} subsets")]
    EnumerationCap { positives: usize, cap: usize },

    #[error("trajectory is tainted by exponent overflow: {0}")]
    Tainted(String),

    #[error("analysis refused: {0}")]
    Refused(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
