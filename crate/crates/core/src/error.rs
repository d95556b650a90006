use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, G5Error>;

#[derive(Debug, Error)]
pub enum G5Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(PathBuf),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("incompatible format version: found {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("label access denied on graph '{0}': labels are sealed (zero-label mode)")]
    LabelAccess(String),

    #[error("pipeline order: {0}")]
    PipelineOrder(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl G5Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        G5Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            G5Error::Numeric(_) => 3,
            G5Error::Io { .. } | G5Error::Integrity(_) | G5Error::Version { .. } => 4,
            _ => 2,
        }
    }
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(G5Error::Shape(msg.into()))
}

pub(crate) fn contract_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(G5Error::Contract(msg.into()))
}
