//! `shiftcp` command-line pipeline.
//!
//! Exit codes: 0 on success, 1 for invalid input or files, 2 when training or
//! calibration fails numerically.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shiftcp::calibration::Method;
use shiftcp::scores::ScoreKind;

use crate::config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "shiftcp",
    version,
    about = "Conformal prediction under distribution shift"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Miscoverage level in (0, 1).
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// split, rlscp, wqlcp or wcp-oracle.
    #[arg(long, global = true)]
    method: Option<Method>,
    /// thr, aps or raps.
    #[arg(long, global = true)]
    score: Option<ScoreKind>,
    /// KL weight of the VAE objective.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Stabilizer in the loss-ratio weights.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Run seed; every component seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train/cal/test splits, fit the probe and write probabilities.
    Synth(commands::SynthArgs),
    /// Train the VAE or compute reconstruction losses.
    #[command(subcommand)]
    Vae(VaeCommand),
    /// Calibrate and build prediction sets.
    #[command(subcommand)]
    Cp(CpCommand),
    /// Coverage, set size and shift severity of a prediction-set file.
    Evaluate(commands::EvaluateArgs),
    /// Run the methods x scores x shifts x trials grid.
    Bench(commands::BenchArgs),
}

#[derive(Debug, Subcommand)]
enum VaeCommand {
    Train(commands::VaeTrainArgs),
    Losses(commands::VaeLossesArgs),
}

#[derive(Debug, Subcommand)]
enum CpCommand {
    CalibratePredict(commands::CalibrateArgs),
}

fn run(cli: Cli) -> Result<(), shiftcp::Error> {
    let g = cli.global;
    let flags = Overrides {
        alpha: g.alpha,
        method: g.method,
        score: g.score,
        beta: g.beta,
        epsilon: g.epsilon,
        seed: g.seed,
    };
    let config = RunConfig::load(g.config.as_deref(), &flags)?;
    match cli.command {
        Command::Synth(args) => commands::synth(&config, &args),
        Command::Vae(VaeCommand::Train(args)) => commands::vae_train(&config, &args),
        Command::Vae(VaeCommand::Losses(args)) => commands::vae_losses(&args),
        Command::Cp(CpCommand::CalibratePredict(args)) => {
            commands::calibrate_predict(&config, &args)
        }
        Command::Evaluate(args) => commands::evaluate(&config, &args),
        Command::Bench(args) => commands::bench(&config, &args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
