use thiserror::Error;

/// Errors surfaced by estimation, certification and inference routines.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A loss or iterate became non-finite. The payload identifies where.
    #[error("numerical failure: {context} (index {index})")]
    NumericalFailure { context: String, index: usize },

    /// Conjugate evaluated outside its domain. Never mapped to a sentinel
    /// value: optimizers must see the violation.
    #[error("domain violation: {divergence} has f*({t}) = +inf outside ({lo}, {hi})")]
    DomainViolation {
        divergence: String,
        t: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid divergence: {0}")]
    InvalidDivergence(String),

    #[error("bracket failure: conjugate maximizer at grid boundary (t = {t})")]
    BracketFailure { t: f64 },

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("singular weighting matrix; consider a ridge > 0")]
    SingularWeighting,

    #[error("singular information matrix")]
    SingularInformation,

    #[error("singular conditional design")]
    SingularDesign,

    #[error("regularization failure: achieved sup-distance {achieved} exceeds radius {radius}")]
    RegularizationFailure { achieved: f64, radius: f64 },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn numerical(context: impl Into<String>, index: usize) -> Self {
        Error::NumericalFailure {
            context: context.into(),
            index,
        }
    }
}
