//! Experiment harness behind the `reactor-grid` binary.

pub mod commands;
pub mod config;
mod files;

use std::path::PathBuf;

pub use commands::{evaluate, reconstruct, sensitivity, simulate, train};
pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] reactor_grid::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Process exit status: 2 for configuration problems, 3 for missing or
    /// unreadable artifacts, 4 for numeric failures and 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use reactor_grid::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                E::Config(_) | E::UnsupportedDefault(_) | E::Unsupported(_) => 2,
                E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
                E::Format { .. } => 3,
                E::Numeric { .. }
                | E::NonConvergence { .. }
                | E::Diverged { .. }
                | E::Autodiff(_)
                | E::Domain(_)
                | E::UndefinedMetric(_) => 4,
                _ => 1,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
