use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("point ({p0}, {p1}) is off the isospectral curve (residual {residual:e})")]
    OffCurve { p0: f64, p1: f64, residual: f64 },

    #[error("magic formula violated: residual {residual:e} exceeds {tol:e}")]
    MagicResidual { residual: f64, tol: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("|Delta(z)| = {modulus} is within {tol:e} of the unit circle; z is too close to E")]
    NearBoundary { modulus: f64, tol: f64 },

    #[error("singular or badly conditioned truncation (condition estimate {cond:e}); increase the padding or check that 0 is not in the spectrum")]
    Singular { cond: f64 },

    #[error("no convergence: {0}")]
    NotConverged(String),

    #[error("structural violation: {0}")]
    Structural(String),

    #[error("divergent functional: v1[{index}] = 0")]
    DivergentLog { index: i64 },

    #[error("malformed input: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
