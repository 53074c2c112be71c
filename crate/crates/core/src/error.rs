use thiserror::Error;

/// Errors raised by model construction, evaluation and analysis.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GasError {
    #[error("invalid dimension {0}: need d >= 2")]
    InvalidDimension(usize),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid weight function: {0}")]
    InvalidWeight(String),

    #[error("invalid charge distribution: {0}")]
    InvalidCharges(String),

    #[error("invalid confinement: {0}")]
    InvalidConfinement(String),

    #[error("invalid manifold: {0}")]
    InvalidManifold(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("singular configuration: particles {i} and {j} are {distance:e} apart")]
    SingularConfiguration { i: usize, j: usize, distance: f64 },

    #[error("quadrature did not reach tolerance {tolerance:e} (estimate {estimate}, error {error:e})")]
    Quadrature {
        estimate: f64,
        error: f64,
        tolerance: f64,
    },

    #[error("wrong regime: {0}")]
    WrongRegime(String),

    #[error("explicit monotonicity tag required for custom weight functions")]
    MonotonicityTagRequired,

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("incompatible target density: {0}")]
    IncompatibleTarget(String),

    #[error("integration failure: {0}")]
    Integration(String),

    #[error("insufficient statistics: {found} samples, need at least {required}")]
    InsufficientStatistics { found: usize, required: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GasError {
    fn from(err: std::io::Error) -> Self {
        GasError::Io(err.to_string())
    }
}

impl From<csv::Error> for GasError {
    fn from(err: csv::Error) -> Self {
        GasError::Parse(err.to_string())
    }
}

impl From<serde_json::Error> for GasError {
    fn from(err: serde_json::Error) -> Self {
        GasError::Parse(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GasError>;
