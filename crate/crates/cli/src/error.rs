use std::io;
use std::process::ExitCode;

use evppi_core::Error;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] Error),

    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Core(e) => match e {
                Error::Domain(_) => "domain",
                Error::Unsupported(_) => "unsupported",
                Error::InsufficientData(_) => "insufficient_data",
                Error::Config(_) => "config",
                Error::NotConverged { .. } => "not_converged",
            },
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_FAILURE,
            CliError::Core(e) => match e {
                Error::Domain(_) | Error::Unsupported(_) | Error::Config(_) => EXIT_CONFIG,
                Error::NotConverged { .. } => EXIT_NOT_CONVERGED,
                Error::InsufficientData(_) => EXIT_FAILURE,
            },
        })
    }

    /// One-line JSON description for stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
        });
        if let CliError::Core(Error::NotConverged { max_level, partial }) = self {
            v["max_level"] = (*max_level).into();
            v["partial_estimate"] = partial.estimate.into();
            v["partial_bias_estimate"] = partial.bias_estimate.into();
        }
        v
    }
}
