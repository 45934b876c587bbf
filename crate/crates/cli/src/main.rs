mod config;
mod design;
mod error;
mod joint;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Variance-based sensitivity analysis with scalar and functional inputs.
#[derive(Parser)]
#[command(name = "funsens", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write pick-freeze design blocks and their manifest.
    Sample(Args),
    /// Estimate Sobol' indices in-process or from external evaluations.
    Estimate(Args),
    /// Fit a joint mean/dispersion metamodel and report its indices.
    FitJoint(Args),
    /// Repeat learning, fitting and estimation to get boxplot data.
    Replicate(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

type Handler = fn(&RunConfig, &std::path::Path) -> Result<()>;

fn run(cli: Cli) -> Result<()> {
    let (args, f): (&Args, Handler) = match &cli.command {
        Command::Sample(a) => (a, design::cmd_sample),
        Command::Estimate(a) => (a, design::cmd_estimate),
        Command::FitJoint(a) => (a, joint::cmd_fit_joint),
        Command::Replicate(a) => (a, joint::cmd_replicate),
    };
    let cfg = RunConfig::load(&args.config, args.seed)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    f(&cfg, &args.out)
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
