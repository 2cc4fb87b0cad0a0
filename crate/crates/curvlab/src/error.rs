use std::path::PathBuf;

/// Failures of the scenario runner, grouped by process exit status.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    /// The scenario file does not match the schema (exit status 2).
    #[error("schema violation: {0}")]
    Schema(String),
    /// A numerical module failed (exit status 3).
    #[error(transparent)]
    Numerics(#[from] curvlab_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl RunError {
    pub fn schema(msg: impl Into<String>) -> Self {
        RunError::Schema(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RunError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Schema(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, RunError>;
