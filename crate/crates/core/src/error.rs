use thiserror::Error;

/// Errors produced by the simulator and its numerical helpers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config at `{path}`: {reason}")]
    InvalidConfig { path: String, reason: String },

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("simulation deadlock at iteration {iteration}: no job in flight")]
    Deadlock { iteration: u64 },

    #[error("scheduler selected worker {worker} which is not idle at iteration {iteration}")]
    BusyWorkerSelected { worker: usize, iteration: u64 },

    #[error("delay identity violated: lhs = {lhs}, rhs = {rhs}")]
    IdentityViolation { lhs: u128, rhs: u128 },

    #[error("statistic undefined: {0}")]
    UndefinedStatistic(String),

    #[error("tuning failed: no grid point succeeded (diverged: {diverged:?})")]
    TuningFailed { diverged: Vec<f64> },

    #[error("integer overflow in delay arithmetic")]
    Overflow,

    #[error("serialization: {0}")]
    Serialization(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
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

pub type Result<T, E = Error> = std::result::Result<T, E>;
