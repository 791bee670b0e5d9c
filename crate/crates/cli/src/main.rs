//! `evovit` command-line entry point.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] evovit::Error),
}

impl CliError {
    /// 2 for configuration, format and I/O problems, 3 for numeric failures.
    pub fn exit_code(&self) -> u8 {
        use evovit::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::Numeric(_)) => 3,
            CliError::Core(E::State(_)) => 1,
            CliError::Core(
                E::Dimension { .. } | E::Config(_) | E::Index(_) | E::Argument(_) | E::Format { .. } | E::Io { .. },
            ) => 2,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| evovit::Error::io(path, e).into())
}

#[derive(Parser, Debug)]
#[command(name = "evovit", version, about = "Slow-fast token evolution for vision transformers")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dot-path assignment into the config, e.g. evo.keep_ratio=0.7. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Training seed (replaces train.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (replaces output_dir).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from scratch; writes manifest, metrics, checkpoint and reports.
    Train,
    /// FLOP report and single-thread forward timing, vanilla and evo side by side.
    Bench(commands::BenchArgs),
    /// CKA/PCC curves and selection-strategy comparison for a checkpoint.
    Analyze(commands::AnalyzeArgs),
    /// Selection masks and overlays as PGM/PPM.
    Visualize(commands::VisualizeArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .common
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let cfg = config::load(path, &cli.common.overrides, cli.common.seed, cli.common.out.as_deref())?;
    match cli.command {
        Command::Train => commands::train(&cfg),
        Command::Bench(a) => commands::bench(&cfg, &a),
        Command::Analyze(a) => commands::analyze(&cfg, &a),
        Command::Visualize(a) => commands::visualize(&cfg, &a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
