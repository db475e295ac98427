use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("unsupported region for analytic heat-kernel coefficients: {0}")]
    UnsupportedRegion(String),

    #[error("empty loop ensemble")]
    EmptyEnsemble,

    #[error("invalid proper-time grid: {0}")]
    InvalidGrid(String),

    #[error("quadrature did not converge: achieved {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("ensemble cache: {0}")]
    Cache(String),

    #[error("config line {line}, column {column}: {message}")]
    Config {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid config: {0}")]
    ConfigValue(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn require_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}
