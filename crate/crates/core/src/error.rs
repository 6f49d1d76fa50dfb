use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical consistency: {0}")]
    NumericalConsistency(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("data generation: {0}")]
    DataGeneration(String),

    #[error("oracle: {0}")]
    Oracle(String),

    /// Conjugate gradients did not reach the requested tolerance.
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("bumped family member k = {k} failed: {source}")]
    Family {
        k: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("step `{step}` failed: {source}")]
    Staged {
        step: String,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn staged(step: impl Into<String>, source: Error) -> Self {
        Error::Staged {
            step: step.into(),
            source: Box::new(source),
        }
    }

    /// True when the root cause is a solver failure (possibly wrapped).
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::Solver { .. } => true,
            Error::Family { source, .. } | Error::Staged { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }

    /// True when the root cause is bad input configuration (possibly wrapped).
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Config(_) | Error::Precondition(_) | Error::DataGeneration(_) => true,
            Error::Family { source, .. } | Error::Staged { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}
