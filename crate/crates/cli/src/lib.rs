//! Experiment driver: TOML configs, named suites, and the train / evaluate /
//! specialize / verify-theory commands. Every command writes into one
//! experiment directory and records its artifacts in `manifest.json`.

pub mod commands;
pub mod config;
pub mod output;
pub mod pipeline;
pub mod presets;

use std::path::{Path, PathBuf};

pub use commands::Outcome;
pub use config::ExperimentConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}:{line}:{col}: {msg}", origin.display())]
    Config { origin: PathBuf, line: usize, col: usize, msg: String },

    #[error("{0}")]
    Validation(String),

    #[error("missing checkpoint {} (run `train` first)", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] splab::Error),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Validation(_) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Evaluate,
    Specialize,
    VerifyTheory,
}

/// Applies the command-line overrides and runs `command`.
pub fn execute(command: Command, mut cfg: ExperimentConfig, seed: Option<u64>, out: Option<&Path>) -> Result<Outcome, CliError> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o.to_path_buf();
    }
    cfg.validate().map_err(|inv| CliError::Validation(format!("{}: {}", inv.key, inv.msg)))?;
    let root = cfg.out_dir.clone();
    match command {
        Command::Train => commands::cmd_train(&cfg, &root),
        Command::Evaluate => commands::cmd_evaluate(&cfg, &root),
        Command::Specialize => commands::cmd_specialize(&cfg, &root),
        Command::VerifyTheory => commands::cmd_verify_theory(&cfg, &root),
    }
}

pub fn exit_code(result: &Result<Outcome, CliError>) -> i32 {
    match result {
        Ok(o) if o.inconclusive => EXIT_INCONCLUSIVE,
        Ok(_) => EXIT_OK,
        Err(e) => e.exit_code(),
    }
}
