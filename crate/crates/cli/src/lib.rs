//! Command implementations behind the `gatedtab` binary.

pub mod commands;
pub mod config;

pub use config::{output_dir, RunConfig, OUT_ROOT_ENV};

/// Error carrying the process exit status: 2 for usage and configuration
/// problems, 1 for failures while running.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<gatedtab::kv::KvError> for CliError {
    fn from(e: gatedtab::kv::KvError) -> Self {
        CliError::Usage(e.to_string())
    }
}
