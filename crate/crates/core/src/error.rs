use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// One offending row of an input table.
#[derive(Debug, Clone, PartialEq)]
pub struct RowIssue {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub message: String,
}

impl std::fmt::Display for RowIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "row {}: {}", self.row, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error in {file}: {message}")]
    Schema { file: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{file}: {} bad row(s); first: {}", .issues.len(), .issues.first().map(|i| i.to_string()).unwrap_or_default())]
    Rows { file: String, issues: Vec<RowIssue> },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error in {op}: {message}")]
    Shape { op: &'static str, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("missing artifact {path}; run `{producer}` first")]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("input file not found: {0}")]
    MissingInput(PathBuf),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Opening a user-supplied input; absence is a data error, anything
    /// else stays an I/O error.
    pub(crate) fn open_input(path: &std::path::Path) -> Result<std::fs::File> {
        std::fs::File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
            _ => Error::io(path, e),
        })
    }

    pub(crate) fn shape(op: &'static str, message: impl Into<String>) -> Self {
        Error::Shape {
            op,
            message: message.into(),
        }
    }

    /// Coarse error class used for process exit codes.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Schema { .. }
            | Error::Validation(_)
            | Error::Rows { .. }
            | Error::Csv(_)
            | Error::MissingArtifact { .. }
            | Error::MissingInput(_) => ErrorClass::Data,
            _ => ErrorClass::Runtime,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Runtime,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Runtime => 4,
        }
    }
}
