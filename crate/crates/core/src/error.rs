//! Error type shared by every module of the simulator.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch between {left} ({left_dim}) and {right} ({right_dim})")]
    DimensionMismatch {
        left: String,
        left_dim: usize,
        right: String,
        right_dim: usize,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("type error: {0}")]
    Type(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("numeric error{}{}: {detail}", round.map(|r| format!(" in round {r}")).unwrap_or_default(), client.as_ref().map(|c| format!(" at client {c}")).unwrap_or_default())]
    Numeric {
        round: Option<usize>,
        client: Option<String>,
        detail: String,
    },

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("integrity error: stored checksum {stored:#010x}, computed {computed:#010x}")]
    Integrity { stored: u32, computed: u32 },

    #[error("unsupported dataset file version {0} (expected 1)")]
    UnsupportedVersion(u8),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn numeric(detail: impl Into<String>) -> Self {
        Error::Numeric {
            round: None,
            client: None,
            detail: detail.into(),
        }
    }

    pub(crate) fn mismatch(
        left: impl Into<String>,
        left_dim: usize,
        right: impl Into<String>,
        right_dim: usize,
    ) -> Self {
        Error::DimensionMismatch {
            left: left.into(),
            left_dim,
            right: right.into(),
            right_dim,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for config and validation errors, 3 for numeric
    /// aborts, 4 for I/O and dataset file errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } => 3,
            Error::Io { .. } | Error::Parse { .. } | Error::Integrity { .. } | Error::UnsupportedVersion(_) => 4,
            _ => 2,
        }
    }

    /// Attach round and client context to a numeric abort raised deep in a
    /// training step. Other variants pass through untouched.
    pub fn at(self, round: usize, client: impl Into<String>) -> Self {
        match self {
            Error::Numeric {
                round: None,
                client: None,
                detail,
            } => Error::Numeric {
                round: Some(round),
                client: Some(client.into()),
                detail,
            },
            other => other,
        }
    }
}
