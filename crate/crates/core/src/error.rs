use thiserror::Error;

use crate::mlmc::MlmcResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The model does not provide the requested capability.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The driver reached `max_level` without meeting the bias target.
    /// The partial result carries every diagnostic gathered so far.
    #[error("MLMC did not converge by level {max_level}")]
    NotConverged {
        max_level: u32,
        partial: Box<MlmcResult>,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
