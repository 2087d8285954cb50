use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NctError {
    /// Invalid configuration or malformed input file (CLI exit code 2).
    #[error("config error: {0}")]
    Config(String),

    /// Numerical failure in a named pipeline stage (CLI exit code 3).
    #[error("numerical failure in stage `{stage}`: {msg}")]
    Numeric { stage: &'static str, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NctError {
    pub fn config(msg: impl Into<String>) -> Self {
        NctError::Config(msg.into())
    }

    pub fn numeric(stage: &'static str, msg: impl Into<String>) -> Self {
        NctError::Numeric {
            stage,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NctError::Io {
            path: path.into(),
            source,
        }
    }

    /// CLI exit code: 0 success, 2 config error, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            NctError::Config(_) => 2,
            NctError::Numeric { .. } => 3,
            NctError::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, NctError>;
