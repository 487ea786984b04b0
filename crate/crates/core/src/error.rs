//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RomError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("numerical divergence in {context} at index {index}")]
    Divergence { context: String, index: usize },
    #[error("archive error: {0}")]
    Archive(String),
    #[error("config error (line {line}): {message}")]
    Config { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = RomError> = std::result::Result<T, E>;

impl RomError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        RomError::Shape(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        RomError::Input(msg.into())
    }

    pub(crate) fn divergence(context: impl Into<String>, index: usize) -> Self {
        RomError::Divergence {
            context: context.into(),
            index,
        }
    }

    /// Prefixes the divergence context, leaving other variants untouched.
    pub fn in_phase(self, phase: &str) -> Self {
        match self {
            RomError::Divergence { context, index } => RomError::Divergence {
                context: format!("{phase}: {context}"),
                index,
            },
            other => other,
        }
    }
}
