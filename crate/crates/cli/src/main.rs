//! `fitdnn`: train, evaluate, gradient-check and simulate folded-in-time
//! deep neural networks.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fitdnn_core::FitDnnError;

#[derive(Parser)]
#[command(name = "fitdnn", version, about = "Folded-in-time deep neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory holding the four IDX files (image tasks only).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the node separation theta.
    #[arg(long)]
    theta: Option<f64>,
    /// Override the forward mode (small_theta | map_limit).
    #[arg(long, value_parser = parse_mode)]
    mode: Option<fitdnn_core::ThetaMode>,
    /// Cap the number of examples used from each split.
    #[arg(long)]
    limit: Option<usize>,
    /// Worker threads for evaluation and finite-difference sweeps
    /// (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_mode(s: &str) -> Result<fitdnn_core::ThetaMode, String> {
    match s {
        "small_theta" => Ok(fitdnn_core::ThetaMode::SmallTheta),
        "map_limit" => Ok(fitdnn_core::ThetaMode::MapLimit),
        _ => Err("expected small_theta or map_limit".into()),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, metrics CSV and manifest.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the number of training epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint: accuracy/MSE, confusion matrix CSV.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Model checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare back-propagated and numerically exact gradients over a
    /// list of node separations.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated node separations to scan.
        #[arg(long, value_delimiter = ',', default_value = "0.0625,0.125,0.5,1,2,4,8")]
        thetas: Vec<f64>,
        /// Size of the random parameter subset for the oracle comparison.
        #[arg(long, default_value_t = 200)]
        subset: usize,
        /// Integrator sub-steps per theta.
        #[arg(long, default_value_t = 128)]
        substeps: usize,
    },
    /// Integrate the delay system for one input and dump the time signals.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Model checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index of the input example in the test split.
        #[arg(long, default_value_t = 0)]
        input_index: usize,
        /// Integrator sub-steps per theta.
        #[arg(long, default_value_t = 16)]
        substeps: usize,
    },
}

/// Runtime failures exit 1; config/usage/data problems exit 2.
fn exit_code_for(err: &FitDnnError) -> u8 {
    match err {
        FitDnnError::InvalidConfig(_)
        | FitDnnError::Parse(_)
        | FitDnnError::Dimension(_)
        | FitDnnError::Structure(_)
        | FitDnnError::Checkpoint(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { common, epochs } => commands::train(&common, epochs),
        Command::Eval { common, checkpoint } => commands::eval(&common, &checkpoint),
        Command::Gradcheck {
            common,
            thetas,
            subset,
            substeps,
        } => commands::gradcheck(&common, &thetas, subset, substeps),
        Command::Simulate {
            common,
            checkpoint,
            input_index,
            substeps,
        } => commands::simulate(&common, &checkpoint, input_index, substeps),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
