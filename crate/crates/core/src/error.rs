use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("empty distribution")]
    EmptyDistribution,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("line {line}: field `{field}`: {msg}")]
    Schema { line: usize, field: String, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite value in {stage}: {detail}")]
    NonFinite { stage: String, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Schema { .. } | Error::Data(_) | Error::Io { .. } => 2,
            Error::NonFinite { .. } => 3,
            // shape errors reaching the CLI come from data/config disagreement
            Error::Shape { .. } | Error::EmptyDistribution => 2,
        }
    }
}
