//! `attsolver` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "attsolver", version, about = "Coarse ODE solvers with a learned compensation term")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted-path override, e.g. `train.learning_rate=1e-4` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for training (replaces the configured seed list).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
pub enum Command {
    /// Generate train/val/test datasets.
    Generate,
    /// Train a compensation module.
    Train {
        /// Continue from `<out>/last.attw` and `<out>/state.json`.
        #[arg(long)]
        resume: bool,
    },
    /// Test-set MSE of a checkpoint.
    Eval,
    /// Test-set MSE of the uncorrected coarse solver.
    Baseline,
    /// Data-reduction sweep.
    Sweep,
    /// Architecture and input ablation.
    Ablate,
    /// Multiplicative versus additive compensation.
    Multiplicative,
    /// Training under per-step noise.
    Attack,
    /// Perturbation growth and convergence probes.
    Probe,
    /// Steps per second of fine, coarse and corrected stepping.
    Bench,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.kind() == ErrorKind::InvalidSubcommand => {
            let names: Vec<String> = Cli::command()
                .get_subcommands()
                .map(|c| c.get_name().to_string())
                .collect();
            eprint!("{e}");
            eprintln!("valid commands: {}", names.join(", "));
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    match commands::run(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
