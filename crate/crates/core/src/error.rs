use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}{}", layer.as_ref().map(|l| format!(" in layer `{l}`")).unwrap_or_default())]
    NonFinite {
        op: &'static str,
        layer: Option<String>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{what} has zero variance")]
    ZeroVariance { what: String },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("unsupported format version {found} in {path} (supported: {supported})")]
    Version {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("truncated {what} in {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("parameter `{name}` has shape {found:?}, configured model expects {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a layer name to a non-finite error raised deeper in the graph.
    pub fn in_layer(self, name: &str) -> Self {
        match self {
            Error::NonFinite { op, layer: None } => Error::NonFinite {
                op,
                layer: Some(name.to_string()),
            },
            other => other,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Shape { .. } | Error::ParamShape { .. } => {
                ErrorCategory::Config
            }
            Error::NonFinite { .. } | Error::ZeroVariance { .. } | Error::Numerical(_) => {
                ErrorCategory::Numerical
            }
            Error::Data(_)
            | Error::BadMagic { .. }
            | Error::Version { .. }
            | Error::Truncated { .. }
            | Error::Io { .. }
            | Error::Json(_) => ErrorCategory::Data,
        }
    }
}
