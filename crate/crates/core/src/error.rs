use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// A value outside the effective domain of a function (represents `+inf`).
    #[error("domain error in {what}: offending value {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("Newton iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NewtonFailure { iterations: usize, residual: f64 },

    #[error("line search failed: {0}")]
    LineSearch(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("time step {index}: {source}")]
    AtStep {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_step(index: usize, source: Error) -> Self {
        Error::AtStep {
            index,
            source: Box::new(source),
        }
    }

    /// True for failures of the numerical solvers (as opposed to bad input).
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::NewtonFailure { .. } | Error::LineSearch(_) | Error::Singular(_) => true,
            Error::AtStep { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}
