use std::path::{Path, PathBuf};

use gcm_core::GcmError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failure of a command, classified by the exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Model(GcmError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("singular first stage: {0}")]
    SingularFirstStage(GcmError),

    #[error("singular standardizer: {0}")]
    SingularStandardizer(GcmError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Model(_) => 2,
            CliError::Io { .. } => 3,
            CliError::SingularFirstStage(_) => 4,
            CliError::SingularStandardizer(_) => 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "Validation",
            CliError::Model(e) | CliError::SingularFirstStage(e) | CliError::SingularStandardizer(e) => e.kind(),
            CliError::Io { .. } => "Io",
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            kind: self.kind().to_string(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}

impl From<GcmError> for CliError {
    fn from(e: GcmError) -> Self {
        CliError::Model(e)
    }
}

/// Machine-readable form of a failure, as stored under `errors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorRecord {
    pub kind: String,
    pub exit_code: i32,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;
