//! `kai`: synthetic data, training, forecasting, evaluation, ablation, and
//! model inspection from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use kai_core::training::Precision;
use kai_core::ErrorCategory;

use config::Preset;

#[derive(Debug, Parser)]
#[command(name = "kai", version, about = "Convolutional global weather emulator")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON file with optional `model`, `train`, `synth`, and `eval` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Starting model configuration before the config file is applied.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Paper)]
    pub preset: Preset,
    /// Seed for initialisation, shuffling, and synthetic data.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_precision)]
    pub precision: Option<Precision>,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse().map_err(|e: kai_core::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic advection dataset.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        start_date: Option<NaiveDate>,
    },
    /// Import a raw little-endian f32 blob described by a JSON manifest.
    ImportRaw {
        #[arg(long)]
        blob: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory and write checkpoints plus a log.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Roll a checkpoint forward from one or more initial dates.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Forecast from every test-split day with enough verifying data when omitted.
        #[arg(long)]
        init_date: Option<NaiveDate>,
        #[arg(long, default_value_t = 10)]
        days: u32,
        #[arg(long)]
        out: PathBuf,
        /// Also render this channel (name) at every lead as a PPM heatmap.
        #[arg(long)]
        heatmap: Option<String>,
    },
    /// Score forecasts against a dataset with persistence and climatology baselines.
    Evaluate {
        /// A forecast directory, or a directory of forecast directories.
        #[arg(long)]
        forecasts: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output prefix; writes `<out>.csv` and `<out>.json`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = ["spatial_mean_removed", "climatology_anomaly"])]
        acc_mode: Option<String>,
    },
    /// Train and score each architectural variant with the same seed and budget.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON list of variants; defaults to all twelve mixer x activation x padding combinations.
        #[arg(long)]
        variants: Option<PathBuf>,
    },
    /// Print the parameter count with a per-module breakdown and the resolved configuration.
    Inspect {
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err
        .chain()
        .find_map(|e| e.downcast_ref::<kai_core::Error>())
    {
        Some(e) => match e.category() {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Numerical => 4,
        },
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
