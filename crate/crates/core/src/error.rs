use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{field}: {message}")]
    Field { field: String, message: String },

    #[error("group of {members} members exceeds design capacity {capacity}")]
    CapacityExceeded { members: usize, capacity: usize },

    #[error("sample {id} appears in {coverage} groups, expected 2")]
    Coverage { id: usize, coverage: usize },

    #[error("MAC total overflowed 64 bits")]
    Overflow,

    #[error("unknown {kind} `{name}`")]
    UnknownRef { kind: &'static str, name: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Field { field: field.into(), message: message.into() }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Wraps the error with a description of what was being attempted.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    /// True for errors caused by bad configuration or input files rather than
    /// by the run itself.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Context { source, .. } => source.is_config_error(),
            Error::Field { .. }
            | Error::UnknownRef { .. }
            | Error::Config(_)
            | Error::Parse(_)
            | Error::Io { .. }
            | Error::InvalidArgument(_) => true,
            Error::CapacityExceeded { .. } | Error::Coverage { .. } | Error::Overflow => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
