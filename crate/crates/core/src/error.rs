use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),
    #[error("index error: node {index} out of range for {num_nodes} nodes")]
    Index { index: usize, num_nodes: usize },
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("schedule error: epoch {v} exceeds total epochs {w}")]
    Schedule { v: usize, w: usize },
    #[error("sample error: {0}")]
    Sample(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("divergence error: non-finite {what} at epoch {epoch}")]
    Divergence { what: &'static str, epoch: usize },
    #[error("firewall error: {0}")]
    Firewall(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("incomplete results: {0}")]
    IncompleteResults(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used in the CLI error block.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format(_) => "format",
            Error::Index { .. } => "index",
            Error::Parameter(_) => "parameter",
            Error::Type(_) => "type",
            Error::Shape(_) => "shape",
            Error::Numerical(_) => "numerical",
            Error::Schedule { .. } => "schedule",
            Error::Sample(_) => "sample",
            Error::Label(_) => "label",
            Error::Divergence { .. } => "divergence",
            Error::Firewall(_) => "firewall",
            Error::Config(_) => "config",
            Error::IncompleteResults(_) => "incomplete_results",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
