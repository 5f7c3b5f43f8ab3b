//! Command implementations behind the `mtl-affect` binary.

pub mod commands;
pub mod config;

use mtl_affect::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("gradient check failed: {0}")]
    GradcheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e {
                Error::Config(_) | Error::StageOrder(_) => EXIT_USAGE,
                Error::Numerical(_) | Error::Oracle { .. } => EXIT_NUMERICAL,
                _ => EXIT_DATA,
            },
            CliError::GradcheckFailed(_) => EXIT_NUMERICAL,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
