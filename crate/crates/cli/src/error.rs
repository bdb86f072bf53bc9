use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("missing prerequisite {}: {hint}", artifact.display())]
    Prerequisite { artifact: PathBuf, hint: String },
    #[error("unreadable artifact {}: {message}", artifact.display())]
    Artifact { artifact: PathBuf, message: String },
    #[error("numeric failure during {stage}: {source}")]
    Numeric {
        stage: &'static str,
        #[source]
        source: loopguard_core::Error,
    },
    #[error("run directory {} is locked (remove {} if no run is active)", dir.display(), dir.join(crate::pipeline::LOCK_FILE).display())]
    Locked { dir: PathBuf },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: loopguard_core::Error,
    },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Machine-readable form written to stderr on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn artifact(artifact: &Path, message: impl ToString) -> Self {
        CliError::Artifact {
            artifact: artifact.to_path_buf(),
            message: message.to_string(),
        }
    }

    /// Sorts a core failure into numeric trouble or a plain stage error.
    pub fn from_core(stage: &'static str, source: loopguard_core::Error) -> Self {
        match source {
            loopguard_core::Error::Diverged { .. } | loopguard_core::Error::NonFinite(_) => {
                CliError::Numeric { stage, source }
            }
            source => CliError::Stage { stage, source },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Prerequisite { .. } => "prerequisite",
            CliError::Artifact { .. } => "artifact",
            CliError::Numeric { .. } => "numeric",
            CliError::Locked { .. } => "locked",
            CliError::Io { .. } => "io",
            CliError::Stage { .. } => "stage",
        }
    }

    /// 2 config, 3 prerequisite, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Prerequisite { .. } | CliError::Artifact { .. } => 3,
            CliError::Numeric { .. } => 4,
            CliError::Locked { .. } | CliError::Io { .. } | CliError::Stage { .. } => 1,
        }
    }

    pub fn report(&self) -> ErrorReport {
        let path = match self {
            CliError::Config { path, .. } => Some(path.clone()),
            CliError::Prerequisite { artifact, .. } | CliError::Artifact { artifact, .. } => {
                Some(artifact.display().to_string())
            }
            _ => None,
        };
        ErrorReport {
            kind: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
            path,
        }
    }
}
