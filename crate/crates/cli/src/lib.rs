//! Pipeline orchestration for the patch-description generator: a flat config
//! file, hashed stage manifests, and one function per CLI subcommand.

pub mod config;
pub mod manifest;
pub mod pipeline;

use patchdesc_core::aspects::AspectError;
use patchdesc_core::cluster::ClusterError;
use patchdesc_core::corpus::CorpusError;
use patchdesc_core::metrics::MetricError;
use patchdesc_core::nmt::NmtError;

/// Errors carry their process exit code: 1 usage, 2 data, 3 numeric failure.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message())
    }
}

impl std::error::Error for CliError {}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AspectError> for CliError {
    fn from(e: AspectError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NmtError> for CliError {
    fn from(e: NmtError) -> Self {
        match e {
            NmtError::NonFiniteLoss(_) => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}
