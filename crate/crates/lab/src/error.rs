use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("refusing to overwrite existing artifact {0}")]
    Exists(PathBuf),
    #[error("missing artifact {0}")]
    Missing(PathBuf),
    #[error("malformed artifact {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Core(#[from] dpa_core::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Self::Malformed {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// 2 for anything the user can fix by editing the config or the output
    /// directory, 3 for failures during the run itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Exists(_) => 2,
            _ => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Exists(_) => "artifact_exists",
            Self::Missing(_) => "missing_artifact",
            Self::Malformed { .. } => "malformed_artifact",
            Self::Io { .. } => "io",
            Self::Invariant(_) => "invariant",
            Self::Core(_) => "runtime",
        }
    }

    /// One-line JSON report for stderr.
    pub fn report(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: &'a str,
            exit_code: i32,
            message: String,
        }
        serde_json::to_string(&Report {
            error: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        })
        .unwrap_or_else(|_| self.to_string())
    }
}
