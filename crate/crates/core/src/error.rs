use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("player {player}: value {value} lies outside [{lo}, {hi}]")]
    OutOfDomain { player: usize, value: f64, lo: f64, hi: f64 },

    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("linear system for the equilibrium is singular")]
    SingularSystem,

    #[error("equilibrium component {player} = {value} violates its interval [{lo}, {hi}]")]
    ActiveConstraint { player: usize, value: f64, lo: f64, hi: f64, solution: Vec<f64> },

    #[error("topology: {0}")]
    Topology(String),

    #[error("schedule: {0}")]
    Schedule(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("config: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
