use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation error in {function} at {point}: {reason}")]
    Evaluation {
        function: String,
        point: String,
        reason: String,
    },

    #[error("expression error at column {column}: {reason}")]
    Expression { column: usize, reason: String },

    #[error("quadrature did not reach tolerance {tolerance:e} on [{a}, {b}]")]
    Tolerance { tolerance: f64, a: f64, b: f64 },

    #[error("{solver} did not converge: residual {residual:e} after {iterations} iterations")]
    Iteration {
        solver: &'static str,
        residual: f64,
        iterations: usize,
    },

    #[error("incompatible boundary data: net boundary penetration {net:e}")]
    Compatibility { net: f64 },

    #[error("positivity violation in {field}: value {value:e} at cell {cell}")]
    Positivity {
        field: &'static str,
        value: f64,
        cell: usize,
    },

    #[error("stability error: {invariant}")]
    Stability { invariant: String },

    #[error("invalid initial data: {0}")]
    InitialData(String),

    #[error("infeasible exponent selection: {0}")]
    Infeasible(String),

    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("validation error for `{key}`: {reason}")]
    Validation { key: String, reason: String },

    #[error("run failed at t = {t}: {source}")]
    RunFailed { t: f64, source: Box<Error> },

    #[error("sweep failed for eps = {eps}: {source}")]
    SweepFailed { eps: f64, source: Box<Error> },

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn validation(key: &str, reason: impl Into<String>) -> Self {
        Error::Validation {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn stability(invariant: impl Into<String>) -> Self {
        Error::Stability {
            invariant: invariant.into(),
        }
    }

    /// Innermost error, looking through run/sweep wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::RunFailed { source, .. } | Error::SweepFailed { source, .. } => source.root(),
            other => other,
        }
    }
}
