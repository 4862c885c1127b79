use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty point set")]
    EmptyPointSet,

    #[error("non-finite coordinate")]
    NonFinite,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("too many points for an enclosing-ball query: {0} (max {max})", max = crate::geometry::MAX_POINTS)]
    TooManyPoints(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("beyond truncation: radius {r} exceeds cutoff {cutoff}")]
    BeyondTruncation { r: f64, cutoff: f64 },

    #[error("invalid rectangle: {0}")]
    InvalidRectangle(String),

    #[error("not in sparse regime")]
    NotSparse,

    #[error("unsupported scaling c; use a=1-normalized spec")]
    UnsupportedScaling,

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("normalizer underflow at n = {n}: n^(k+2) r_n^(d(k+1)) = {value:e}; reduce n")]
    NormalizerUnderflow { n: u64, value: f64 },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

impl Error {
    /// Errors caused by invalid input or configuration rather than by a
    /// failure during computation.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::InvalidRectangle(_)
                | Error::NotSparse
                | Error::UnsupportedScaling
                | Error::ConfigMismatch(_)
                | Error::DimensionMismatch { .. }
                | Error::Json(_)
        )
    }
}
