use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("degenerate batch in {op}: need at least 2 rows, got {rows}")]
    DegenerateBatch { op: &'static str, rows: usize },

    #[error("degenerate row {row} in {op}: zero norm")]
    DegenerateRow { op: &'static str, row: usize },

    #[error("tape lifecycle: {0}")]
    Lifecycle(String),

    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("node id {id} out of range for {n} nodes{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Range {
        id: usize,
        n: usize,
        context: Option<String>,
    },

    #[error("{0}")]
    Consistency(String),

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Format(String),

    #[error("{0}")]
    Protocol(String),

    #[error("non-finite value in `{term}` at epoch {epoch}")]
    NonFinite { term: &'static str, epoch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, used by the CLI's `ERROR <category>: <detail>` line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::DegenerateBatch { .. } | Error::DegenerateRow { .. } | Error::NonFinite { .. } => {
                "numeric"
            }
            Error::Lifecycle(_) => "lifecycle",
            Error::Parse { .. } | Error::Json(_) => "parse",
            Error::Range { .. } => "range",
            Error::Consistency(_) => "consistency",
            Error::Config(_) => "config",
            Error::Format(_) => "format",
            Error::Protocol(_) => "protocol",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
