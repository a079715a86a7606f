use std::path::PathBuf;

use sspc_core::cloud::CloudError;
use sspc_core::model::ModelError;
use sspc_core::partition::PartitionError;
use sspc_core::train::TrainError;

/// A parse failure inside a text file; `line` is 1-based, 0 for whole-file problems.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {msg}")]
pub struct FormatError {
    pub line: usize,
    pub msg: String,
}

impl FormatError {
    pub fn new(line: usize, msg: impl Into<String>) -> Self {
        Self { line, msg: msg.into() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{}: {}", path.display(), source.line, source.msg)]
    Parse { path: PathBuf, source: FormatError },
    #[error("{0}")]
    Config(String),
    #[error("checkpoint {}: {detail}", path.display())]
    Checkpoint { path: PathBuf, detail: String },
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Short stable tag for the failure class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Cloud(_) => "cloud",
            Error::Partition(_) => "partition",
            Error::Model(_) => "model",
            Error::Train(_) => "train",
            Error::Usage(_) => "usage",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, source: FormatError) -> Self {
        Error::Parse { path: path.into(), source }
    }
}

pub(crate) fn read_text(path: &std::path::Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &std::path::Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
