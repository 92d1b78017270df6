use std::io;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("run aborted at episode {episode}: {source}")]
    Aborted {
        episode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run {run} failed: {source}")]
    Run {
        run: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// True for configuration, usage and parse errors, directly or wrapped.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Parse { .. } => true,
            Error::Aborted { source, .. } | Error::Run { source, .. } => source.is_config(),
            _ => false,
        }
    }

    /// True when the error (or the error it wraps) is a numeric failure.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Numeric(_) => true,
            Error::Aborted { source, .. } | Error::Run { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
