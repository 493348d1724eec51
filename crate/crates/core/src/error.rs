use thiserror::Error;

#[derive(Debug, Error)]
pub enum VpcError {
    #[error("point {index} has non-positive depth {depth:.3e} m")]
    NonPositiveDepth { index: usize, depth: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("could not sample a valid initial configuration after {0} draws")]
    SamplingExhausted(usize),

    #[error("degenerate feature polygon (area {0:.3e} px^2)")]
    DegeneratePolygon(f64),

    #[error("non-finite value encountered during {0}")]
    NumericalFailure(&'static str),

    #[error("memory store is empty")]
    EmptyStore,

    #[error("kernel matrix could not be factorized even with jitter {0:e}")]
    IllConditioned(f64),

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("schema error at `{path}`: {msg}")]
    Schema { path: String, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("benchmark needs at least one trial")]
    EmptyTrialSet,

    #[error("strategy `{0}` needs a memory store")]
    MissingMemory(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl VpcError {
    /// Errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            VpcError::Schema { .. }
                | VpcError::Validation(_)
                | VpcError::Format { .. }
                | VpcError::DimensionMismatch { .. }
                | VpcError::EmptyTrialSet
                | VpcError::MissingMemory(_)
                | VpcError::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, VpcError>;
