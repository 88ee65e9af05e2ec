use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("universe mismatch: {left} vs {right}")]
    UniverseMismatch { left: usize, right: usize },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),

    #[error("state space of {states} exceeds the cap of {cap}")]
    StateSpaceExceeded { states: usize, cap: usize },

    #[error("zero-probability conditioning event: {0}")]
    ZeroProbability(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("{origin}: {msg}")]
    Input { origin: String, msg: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("sampler scanned {0} tape elements without a hit")]
    ScanCapExceeded(u64),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Transport(e.to_string())
    }
}
