use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,
    #[error("non-finite sample")]
    NonFiniteSample,
    #[error("quantile level out of range: {0}")]
    QuantileOutOfRange(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid cdf: {0}")]
    InvalidCdf(String),
    #[error(
        "grid does not cover sample range: samples in [{lo}, {hi}], grid [{grid_lo}, {grid_hi}]"
    )]
    GridDoesNotCover {
        lo: f64,
        hi: f64,
        grid_lo: f64,
        grid_hi: f64,
    },
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("context schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("collinear context")]
    CollinearContext,
    #[error("{0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
