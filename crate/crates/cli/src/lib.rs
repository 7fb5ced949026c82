//! Run orchestration for the `mvp` binary: configuration, run directories,
//! one function per subcommand, and SVG figures.

pub mod commands;
pub mod config;
pub mod rundir;
pub mod svg;

pub use config::RunConfig;
pub use rundir::RunDir;

use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// The run finished but a checked property did not hold.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Contract(_) => 2,
            CliError::Numeric(_) | CliError::Failed(_) => 3,
        }
    }
}

impl From<mvp_core::Error> for CliError {
    fn from(e: mvp_core::Error) -> Self {
        match e {
            mvp_core::Error::Contract(m) => CliError::Contract(m),
            e @ mvp_core::Error::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(format!("json: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
