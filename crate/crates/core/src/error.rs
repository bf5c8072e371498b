use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown loss function `{0}`")]
    UnknownLoss(String),

    #[error("unknown perturbation `{0}`")]
    UnknownPerturbation(String),

    #[error("invalid probability {0}: must lie in [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("invalid adversary: {0}")]
    InvalidAdversary(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("support mismatch: {0} atoms vs {1} atoms")]
    SupportMismatch(usize, usize),

    #[error("loss `{name}` is not usable here: {reason}")]
    LossDomain { name: String, reason: String },

    #[error("adversary has no `identity` component")]
    MissingIdentity,

    #[error("grid step {0} does not divide 1 evenly")]
    BadGridStep(f64),

    #[error("grid too fine: {0} candidates exceeds the limit of {1}")]
    GridTooFine(u128, u128),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid network spec: {0}")]
    InvalidNetwork(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input rather than by a computation.
    pub fn is_config_error(&self) -> bool {
        !matches!(self, Error::Shape(_) | Error::NonFinite(_))
    }
}
