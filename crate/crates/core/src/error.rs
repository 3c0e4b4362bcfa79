use thiserror::Error;

pub type Result<T> = std::result::Result<T, EpdError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpdError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// `exp(alpha * t)` would leave the representable range.
    #[error("exponential overflow: alpha * t = {0} exceeds the representable range")]
    Overflow(f64),

    #[error("integrand returned a non-finite value {value} at x = {abscissa}")]
    Integrand { abscissa: f64, value: f64 },

    #[error("quadrature did not converge: value {value}, error estimate {err_est} after {intervals} subintervals")]
    Quadrature {
        value: f64,
        err_est: f64,
        intervals: usize,
    },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("singular or ill-conditioned matrix (condition number {condition:e}): {context}")]
    Singular { context: String, condition: f64 },

    #[error("tuning failed: {0}")]
    Tuning(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("dataset '{dataset}' failed validation: {statistic} expected {expected} got {got} (tolerance {tolerance})")]
    Validation {
        dataset: String,
        statistic: String,
        expected: f64,
        got: f64,
        tolerance: f64,
    },
}

impl EpdError {
    /// Short machine-readable tag used in structured error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            EpdError::Domain(_) => "domain",
            EpdError::Parameter(_) => "parameter",
            EpdError::Overflow(_) => "overflow",
            EpdError::Integrand { .. } => "integrand",
            EpdError::Quadrature { .. } => "quadrature",
            EpdError::Estimation(_) => "estimation",
            EpdError::Singular { .. } => "singular",
            EpdError::Tuning(_) => "tuning",
            EpdError::Data(_) => "data",
            EpdError::Parse { .. } => "parse",
            EpdError::Validation { .. } => "validation",
        }
    }
}
