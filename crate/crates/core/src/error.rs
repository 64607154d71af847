use thiserror::Error;

/// Errors raised across the library. Each variant maps to one failure class
/// so callers (and the CLI exit code) can branch on it.
#[derive(Debug, Error)]
pub enum SageError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("geometric infeasibility: {0}")]
    GeometricInfeasibility(String),
    #[error("layout infeasibility: {0}")]
    LayoutInfeasibility(String),
    #[error("state error: {0}")]
    State(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl SageError {
    /// Short machine-readable kind tag used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            SageError::InvalidDimension(_) => "invalid-dimension",
            SageError::InvalidInput(_) => "invalid-input",
            SageError::InvalidArgument(_) => "invalid-argument",
            SageError::NumericFailure(_) => "numeric-failure",
            SageError::GeometricInfeasibility(_) => "geometric-infeasibility",
            SageError::LayoutInfeasibility(_) => "layout-infeasibility",
            SageError::State(_) => "state-error",
            SageError::UndefinedMetric(_) => "undefined-metric",
            SageError::Config(_) => "config-error",
            SageError::Parse(_) => "parse-error",
            SageError::Io(_) => "io-error",
        }
    }

    /// The message without the kind prefix.
    pub fn detail(&self) -> String {
        match self {
            SageError::InvalidDimension(m)
            | SageError::InvalidInput(m)
            | SageError::InvalidArgument(m)
            | SageError::NumericFailure(m)
            | SageError::GeometricInfeasibility(m)
            | SageError::LayoutInfeasibility(m)
            | SageError::State(m)
            | SageError::UndefinedMetric(m)
            | SageError::Config(m)
            | SageError::Parse(m) => m.clone(),
            SageError::Io(e) => e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SageError>;
