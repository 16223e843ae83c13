use thiserror::Error;

use crate::pem::TraceEntry;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// The optimiser produced a non-finite objective. The trace up to the
    /// failing iteration is kept for inspection.
    #[error("numerical failure: {message}")]
    NumericalFailure { message: String, trace: Vec<TraceEntry> },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("no usable data: {0}")]
    EmptyInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be finite, got {x}")))
    }
}
