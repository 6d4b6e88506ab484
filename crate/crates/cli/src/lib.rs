//! IO companion to `mtseg-core`: experiment configs, binary checkpoint and
//! dataset formats, CSV/SVG report emission, run manifests, and the batch
//! experiment runners behind the `mtseg` binary.

pub mod config;
pub mod formats;
pub mod manifest;
pub mod outputs;
pub mod runner;
pub mod svg;

use std::io;

/// CLI-level failures, mapped onto process exit codes in `main`.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration (exit code 2).
    #[error("config error: {0}")]
    Config(String),
    /// Training aborted on non-finite numerics (exit code 3).
    #[error("numeric abort: {0}")]
    Numeric(String),
    /// Some matrix entries failed while others completed (exit code 4).
    #[error("{failed} of {total} matrix runs failed")]
    PartialMatrix { failed: usize, total: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed file {path}: {reason}")]
    BadFile { path: String, reason: String },
    #[error(transparent)]
    Core(mtseg_core::CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::PartialMatrix { .. } => 4,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<mtseg_core::CoreError> for CliError {
    fn from(e: mtseg_core::CoreError) -> Self {
        match e {
            mtseg_core::CoreError::Config(msg) => CliError::Config(msg),
            mtseg_core::CoreError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
