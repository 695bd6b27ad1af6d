use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use splab_cli::presets::{preset, PRESETS};
use splab_cli::{execute, exit_code, Command, ExperimentConfig, EXIT_OK, EXIT_VALIDATION};

#[derive(Parser)]
#[command(name = "splab", version, about = "Teacher-student robustness experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build or load the teacher, train every run, store checkpoints and grid metrics.
    Train(Common),
    /// Robust accuracy of the stored students under each configured attack.
    Evaluate(Common),
    /// Specialization curves of the stored students.
    Specialize(Common),
    /// Generate, train and check a synthetic two-layer benchmark.
    VerifyTheory(Common),
    /// Print a named preset as TOML.
    Preset { name: String },
}

#[derive(Args)]
struct Common {
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Use a named preset instead of a config file.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn unknown_preset(name: &str) -> ExitCode {
    eprintln!("error: unknown preset '{name}' (known: {})", PRESETS.join(", "));
    ExitCode::from(EXIT_VALIDATION as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Evaluate(a) => (Command::Evaluate, a),
        Cmd::Specialize(a) => (Command::Specialize, a),
        Cmd::VerifyTheory(a) => (Command::VerifyTheory, a),
        Cmd::Preset { name } => {
            let Some(cfg) = preset(&name) else { return unknown_preset(&name) };
            print!("{}", cfg.to_toml());
            return ExitCode::from(EXIT_OK as u8);
        }
    };
    let cfg = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::load(path),
        (None, Some(name)) => match preset(name) {
            Some(c) => Ok(c),
            None => return unknown_preset(name),
        },
        (None, None) => unreachable!("clap requires one"),
    };
    let result = cfg.and_then(|cfg| execute(command, cfg, args.seed, args.out.as_deref()));
    match &result {
        Ok(o) => o.lines.iter().for_each(|l| println!("{l}")),
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
