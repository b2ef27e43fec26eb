use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {dim} is not supported (need d >= {min})")]
    UnsupportedDimension { dim: usize, min: usize },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: String,
        reason: &'static str,
    },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {context} (particle {particle})")]
    NonFiniteInput {
        context: &'static str,
        particle: usize,
    },

    #[error("non-finite {term} term for particle {particle}{}", other.map(|i| format!(" (interaction with particle {i})")).unwrap_or_default())]
    NonFiniteFlow {
        term: &'static str,
        particle: usize,
        other: Option<usize>,
    },

    #[error("loss model failed at step {step}, particle {particle}: {source}")]
    Evaluation {
        step: usize,
        particle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("step {step} is outside the loss model horizon of {horizon} observations")]
    StepOutOfRange { step: usize, horizon: usize },

    #[error("filter run aborted at step {step}: {source}")]
    RunAborted {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("need at least {needed} particles, found {found}")]
    TooFewParticles { needed: usize, found: usize },

    #[error("ensembles have different sizes ({left} vs {right})")]
    SizeMismatch { left: usize, right: usize },

    #[error("covariance is not positive definite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("all importance weights vanished")]
    DegenerateWeights,

    #[error("config error at line {line} for key `{key}`: {message}")]
    Config {
        key: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, value: impl ToString, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value: value.to_string(),
            reason,
        }
    }
}
