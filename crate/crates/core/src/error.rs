use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: {msg}")]
    Training {
        epoch: usize,
        batch: usize,
        msg: String,
    },

    #[error("non-finite gradient in parameter update")]
    NonFiniteGradient,

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    /// Process exit code for this error: 1 usage/config, 2 I/O or file
    /// format, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape { .. } | Error::Eval(_) => 1,
            Error::Io(_) | Error::Format { .. } => 2,
            Error::Training { .. } | Error::NonFiniteGradient => 3,
        }
    }
}
