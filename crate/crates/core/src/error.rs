use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification of failures, used by front ends to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("index {index} out of bounds for {what} of size {bound}")]
    Bounds {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    Length { expected: usize, actual: usize },

    #[error("stability condition violated: spectral radius {radius} >= 1")]
    Unstable { radius: f64 },

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::State(_) => ErrorKind::Config,
            Error::Parse { .. }
            | Error::Bounds { .. }
            | Error::Shape(_)
            | Error::Length { .. }
            | Error::Invariant(_)
            | Error::Metric(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorKind::Data,
            Error::Domain(_)
            | Error::Unstable { .. }
            | Error::Degenerate(_)
            | Error::Divergence(_)
            | Error::NonFinite(_) => ErrorKind::Numeric,
        }
    }
}
