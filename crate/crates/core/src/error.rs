use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AcpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AcpError {
    /// A file did not match its expected format.
    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },

    /// Well-formed input that breaks a domain invariant.
    #[error("validation error in {context}: {message}")]
    Validation { context: String, message: String },

    /// A caller broke an operation precondition (dimensions, arch kind, weights).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("action space is empty")]
    EmptySpace,

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AcpError {
    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        AcpError::Parse {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn validation(context: impl Into<String>, message: impl Into<String>) -> Self {
        AcpError::Validation {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn contract(message: impl Into<String>) -> Self {
        AcpError::Contract(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AcpError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable kind, used in CLI error prefixes.
    pub fn kind(&self) -> &'static str {
        match self {
            AcpError::Parse { .. } => "parse",
            AcpError::Validation { .. } => "validation",
            AcpError::Contract(_) => "contract",
            AcpError::EmptySpace => "empty_space",
            AcpError::Divergence { .. } => "divergence",
            AcpError::Io { .. } => "io",
        }
    }
}
