use std::fmt;

use hetgas::GasError;

/// Malformed or inconsistent scenario configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Failure,
    Config,
    Convergence,
    Statistics,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Failure => 1,
            ExitKind::Config => 2,
            ExitKind::Convergence => 3,
            ExitKind::Statistics => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ExitKind::Failure => "failure",
            ExitKind::Config => "config",
            ExitKind::Convergence => "convergence",
            ExitKind::Statistics => "statistics",
        }
    }
}

fn gas_kind(e: &GasError) -> ExitKind {
    match e {
        GasError::InsufficientStatistics { .. } => ExitKind::Statistics,
        GasError::Convergence(_) => ExitKind::Convergence,
        GasError::InvalidDimension(_)
        | GasError::InvalidKernel(_)
        | GasError::InvalidWeight(_)
        | GasError::InvalidCharges(_)
        | GasError::InvalidConfinement(_)
        | GasError::InvalidManifold(_)
        | GasError::WrongRegime(_)
        | GasError::MonotonicityTagRequired
        | GasError::IncompatibleTarget(_)
        | GasError::Parse(_) => ExitKind::Config,
        _ => ExitKind::Failure,
    }
}

/// Exit category of the first typed error in the chain.
pub fn classify(err: &anyhow::Error) -> ExitKind {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return ExitKind::Config;
        }
        if let Some(g) = cause.downcast_ref::<GasError>() {
            return gas_kind(g);
        }
    }
    ExitKind::Failure
}

/// One-line `key=value` diagnostic for stderr.
pub fn diagnostic(err: &anyhow::Error) -> String {
    let kind = classify(err);
    let message = format!("{err:#}").replace('\n', " ").replace('"', "'");
    format!("hetgas: error code={} kind={} message=\"{}\"", kind.code(), kind.label(), message)
}
