use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use obsint::gradcheck::format_table;
use obsint_cli::{cmd_eval, cmd_gradcheck, cmd_predict, cmd_simulate, cmd_train, init_threads, load_config, EXIT_GRADCHECK, EXIT_THRESHOLD};

/// Learned refinement of raw IMU measurements for inertial preintegration.
#[derive(Parser)]
#[command(name = "obsint", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config value, e.g. `--set train.lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from `data.simulate`.
    Simulate(Common),
    /// Train the refinement network.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from last.json/best.json in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Write metric reports for raw and, given a checkpoint, refined measurements.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare every analytic gradient against finite differences.
    Gradcheck(Common),
    /// Dead-reckon refined measurements into a trajectory CSV.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Re-anchor to ground truth every this many seconds.
        #[arg(long)]
        horizon: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    init_threads(std::env::var("OBSINT_THREADS").ok().as_deref())?;
    let load = |c: &Common| load_config(&c.config, &c.set, c.seed);
    match cli.command {
        Command::Simulate(c) => {
            cmd_simulate(&load(&c)?)?;
        }
        Command::Train { common, resume } => {
            cmd_train(&load(&common)?, resume)?;
        }
        Command::Eval { common, checkpoint } => {
            let outcome = cmd_eval(&load(&common)?, checkpoint.as_deref())?;
            if !outcome.violations.is_empty() {
                for v in &outcome.violations {
                    log::error!("threshold violated: {v}");
                }
                return Ok(ExitCode::from(EXIT_THRESHOLD));
            }
        }
        Command::Gradcheck(c) => {
            let results = cmd_gradcheck(&load(&c)?)?;
            print!("{}", format_table(&results));
            if results.iter().any(|r| !r.passed) {
                return Ok(ExitCode::from(EXIT_GRADCHECK));
            }
        }
        Command::Predict { common, checkpoint, horizon } => {
            cmd_predict(&load(&common)?, &checkpoint, horizon)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).target(env_logger::Target::Stderr).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
