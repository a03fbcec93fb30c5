use thiserror::Error;

/// Errors produced by rule construction, filtering, smoothing and estimation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid cubature scheme: {0}")]
    InvalidScheme(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("moment system for symmetric rule of order {order} in {dim} dimensions is singular (residual {residual:e})")]
    SingularMomentSystem { order: usize, dim: usize, residual: f64 },

    /// A covariance could not be factorized even after the full jitter schedule,
    /// or an innovation/prediction covariance could not be inverted.
    #[error("numerical breakdown at step {step:?}: {what}")]
    NumericalBreakdown { step: Option<usize>, what: String },

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("singular sufficient statistic {0} in closed-form M-step")]
    SingularStatistic(&'static str),

    #[error("model has no linear-in-parameters form")]
    NotLinearInParams,

    #[error("line search failed after {iterations} iterations")]
    LineSearchFailed { iterations: usize, best: Vec<f64>, objective: f64 },

    #[error("particle weights collapsed at step {step}")]
    WeightCollapse { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{stage} failed at iteration {iteration}: {source}")]
    Iteration {
        stage: &'static str,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn breakdown(step: Option<usize>, what: impl Into<String>) -> Self {
        Error::NumericalBreakdown { step, what: what.into() }
    }

    /// Attach a step index to a breakdown that was raised without one.
    pub(crate) fn at_step(self, k: usize) -> Self {
        match self {
            Error::NumericalBreakdown { step: None, what } => Error::NumericalBreakdown { step: Some(k), what },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
