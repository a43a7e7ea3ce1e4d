//! `dashrisk`: generate synthetic data, train, evaluate, run ablation grids
//! and draw risk curves.

mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "dashrisk",
    version,
    about = "Depth-aware accident anticipation on dashcam features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset into --out.
    GenData {
        /// Scenario config file (flat key = value).
        #[arg(long, env = "DASHRISK_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "DASHRISK_OUT")]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long, env = "DASHRISK_SEED")]
        seed: Option<u64>,
    },
    /// Train a model; writes the log and best/final checkpoints.
    Train {
        /// Training config file (flat key = value).
        #[arg(long, env = "DASHRISK_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "DASHRISK_DATASET")]
        dataset: PathBuf,
        #[arg(long, env = "DASHRISK_OUT")]
        out: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Score a split with a checkpoint and write the report.
    Eval {
        #[arg(long, env = "DASHRISK_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long, env = "DASHRISK_DATASET")]
        dataset: PathBuf,
        #[arg(long, env = "DASHRISK_OUT")]
        out: PathBuf,
        #[arg(long, env = "DASHRISK_SPLIT", default_value = "test")]
        split: String,
        /// Threshold for the per-video detection columns.
        #[arg(long, env = "DASHRISK_THRESHOLD", default_value_t = 0.5)]
        threshold: f64,
    },
    /// Run an ablation grid and write comparison tables.
    Ablate {
        /// Grid file: `family`, optional `betas`, and `train.*` base settings.
        #[arg(long, env = "DASHRISK_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "DASHRISK_DATASET")]
        dataset: PathBuf,
        #[arg(long, env = "DASHRISK_OUT")]
        out: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Draw per-frame risk curves for the given samples.
    PlotCurve {
        #[arg(long, env = "DASHRISK_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long, env = "DASHRISK_DATASET")]
        dataset: PathBuf,
        #[arg(long, env = "DASHRISK_OUT")]
        out: PathBuf,
        /// Sample ids, repeatable.
        #[arg(long = "sample", required = true)]
        samples: Vec<String>,
        #[arg(long, env = "DASHRISK_THRESHOLD", default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, value_enum, env = "DASHRISK_FORMAT", default_value_t = ImageFormat::Svg)]
        format: ImageFormat,
    },
}

#[derive(Debug, Clone, Args)]
struct ModelFlags {
    /// Overrides the training seed.
    #[arg(long, env = "DASHRISK_SEED")]
    seed: Option<u64>,
    /// Collision graph mode.
    #[arg(long, env = "DASHRISK_MODE", value_parser = ["2d", "3d"])]
    mode: Option<String>,
    /// Module switch, `<name>=<on|off>`; repeatable.
    #[arg(long = "toggle")]
    toggles: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImageFormat {
    Svg,
    Png,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
