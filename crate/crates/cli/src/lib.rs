//! Library side of the `uacp` command-line tool. Each subcommand is a plain
//! function returning its results, so tests can drive them without a
//! subprocess; `main.rs` only parses arguments and maps errors to exit codes.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_ablate, cmd_evaluate, cmd_generate, cmd_gradcheck, cmd_sweep_unknowns, cmd_train,
    AblationRow, RunContext, SweepRow, ABLATION_LABELS,
};
pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] uacp::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("gradient check failed: {0}")]
    GradcheckFailed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 for bad input or configuration, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::Core(uacp::Error::Io(_)) => 2,
            CliError::Core(_) | CliError::Config(_) => 1,
            CliError::GradcheckFailed(_) | CliError::Io(_) => 2,
        }
    }
}
