use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("duplicate SU index {0}")]
    DuplicateIndex(usize),

    #[error("infeasible sensing: {0}")]
    InfeasibleSensing(String),

    #[error("infeasible design: violates {0:?}")]
    Infeasible(Vec<crate::throughput::Constraint>),

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
