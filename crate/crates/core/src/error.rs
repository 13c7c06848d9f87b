use thiserror::Error;

/// Errors raised by the solvers. Every variant names the module that produced it.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MfError {
    #[error("mfcore: invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("mfcore: degenerate density: all weights are zero")]
    DegenerateDensity,
    #[error("mfcore: density underflow (mean {0:e} below 1e-300)")]
    Underflow(f64),
    #[error("{module}: configuration error: {msg}")]
    Config { module: &'static str, msg: String },
    #[error("{module}: non-finite value in {quantity} at (j={j}, i={i}, k={k})")]
    Blowup {
        module: &'static str,
        quantity: &'static str,
        j: usize,
        i: usize,
        k: usize,
    },
    #[error("mfforward: Picard iteration did not contract within {max_iter} iterations; gaps {gaps:?}")]
    ContractionFailure { max_iter: usize, gaps: Vec<f64> },
    #[error("mfadjoint: regression failed: {0}")]
    Regression(String),
    #[error("{module}: unsupported mode: {msg}")]
    UnsupportedMode { module: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, MfError>;

pub(crate) fn config(module: &'static str, msg: impl Into<String>) -> MfError {
    MfError::Config {
        module,
        msg: msg.into(),
    }
}
