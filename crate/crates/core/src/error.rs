use thiserror::Error;

/// Errors raised by the simulation, sampling and inference routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("diffusion matrix is singular at index {index}")]
    SingularDiffusion { index: usize },

    #[error("states coincide; coupling direction is undefined")]
    DegenerateDirection,

    #[error("sigma(x)^T sigma(x') is rank deficient; orthogonal correction is ambiguous")]
    AmbiguousPolarFactor,

    #[error("no crossing detected within {attempts} attempts")]
    BridgeExhausted { attempts: usize },

    #[error("bridge was not hit by any of {trials} associated diffusions")]
    HitBudgetExhausted { trials: usize },

    #[error("chain failed at iteration {iteration}: {source}")]
    Chain {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("interval {interval} failed after {retries} retries: {source}")]
    Imputation {
        interval: usize,
        retries: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("drift matrix is not stable (an eigenvalue has non-positive real part)")]
    UnstableDrift,

    #[error("matrix is singular: {0}")]
    Singular(&'static str),

    #[error("underdetermined: {0}")]
    Underdetermined(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::Chain {
            iteration,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
