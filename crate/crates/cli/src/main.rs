//! `mmc`: simulate exam streams, train the appearance encoder, calibrate
//! against a reference set, monitor a stream and summarize the result.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(
    name = "mmc",
    version,
    about = "Multi-modal drift concordance monitoring"
)]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic exam stream, optionally with a drift scenario.
    Simulate(SimulateArgs),
    /// Train the appearance encoder on a directory of images.
    TrainVae(TrainVaeArgs),
    /// Encode images to latent means with a trained encoder.
    Encode(EncodeArgs),
    /// Calibrate offsets, scales and weights from a reference stream.
    Calibrate(CalibrateArgs),
    /// Score every window of a stream against a calibration.
    Monitor(MonitorArgs),
    /// Summarize a concordance series by segment.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ScenarioArg {
    Baseline,
    HardMining,
    MetadataFilterFailure,
    NoMetadataOod,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML document with optional `seed`, `[population]` and `[scenario]`
    /// tables. Flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    /// Hard-mining quantile.
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub start: Option<NaiveDate>,
    #[arg(long)]
    pub end: Option<NaiveDate>,
    #[arg(long)]
    pub point_a: Option<NaiveDate>,
    #[arg(long)]
    pub point_b: Option<NaiveDate>,
    /// Injected exams per base exam (lateral or out-of-population).
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImageSource {
    /// Directory of `.pgm` (or `.txt` pixel dump) images.
    #[arg(long, conflicts_with = "synthetic")]
    pub images: Option<PathBuf>,
    /// Use this many generated two-population images instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainVaeArgs {
    #[command(flatten)]
    pub source: ImageSource,
    /// TOML document with encoder settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub kl_coeff: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-epoch losses as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub vae: PathBuf,
    #[command(flatten)]
    pub source: ImageSource,
    /// Seed for generated images.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    #[arg(long, default_value_t = 30)]
    pub window_days: u32,
    #[arg(long, default_value_t = 1)]
    pub stride_days: u32,
    #[arg(long, default_value_t = 150)]
    pub min_exams: usize,
    #[arg(long, default_value_t = 2500)]
    pub bootstrap_k: usize,
    #[arg(long, default_value_t = 20)]
    pub bootstrap_n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorrelationArg {
    Pearson,
    Spearman,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub reference: PathBuf,
    /// Schema document; defaults to the reference's `.schema.json` sidecar.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Quantile for the hard-mined windows used to fit weights.
    #[arg(long, default_value_t = 0.25)]
    pub q: f64,
    /// Hard-mined windows per reference window.
    #[arg(long, default_value_t = 1.0)]
    pub alpha_ratio: f64,
    #[arg(long, value_enum, default_value = "pearson")]
    pub correlation: CorrelationArg,
    /// Labels pooled into the performance measure (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub auroc_labels: Vec<String>,
    /// Use the weights as calibrated instead of rescaling them to sum to one.
    #[arg(long)]
    pub raw_weights: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub calibration: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the calibrated minimum window size.
    #[arg(long)]
    pub min_exams: Option<usize>,
    #[arg(long)]
    pub window_days: Option<u32>,
    #[arg(long)]
    pub stride_days: Option<u32>,
    #[arg(long)]
    pub bootstrap_k: Option<usize>,
    #[arg(long)]
    pub bootstrap_n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub start: Option<NaiveDate>,
    #[arg(long)]
    pub end: Option<NaiveDate>,
    #[arg(long)]
    pub no_metadata: bool,
    #[arg(long)]
    pub no_latent: bool,
    #[arg(long)]
    pub no_predictions: bool,
    /// Leave the weighted score out of the series.
    #[arg(long)]
    pub unweighted: bool,
    #[arg(long, value_delimiter = ',')]
    pub auroc_labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Series file written by `monitor`.
    pub series: PathBuf,
    #[arg(long = "change-point")]
    pub change_points: Vec<NaiveDate>,
    /// Take change points from a stream's `.scenario.json` sidecar.
    #[arg(long)]
    pub scenario_file: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub window_days: u32,
    #[arg(long, value_enum, default_value = "text")]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0:#}")]
    Config(anyhow::Error),
    #[error("{0:#}")]
    Data(anyhow::Error),
    #[error("{0}")]
    Mismatch(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Mismatch(_) => 4,
        }
    }
}

pub trait Classify<T> {
    fn config(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::TrainVae(a) => commands::train_vae(a),
        Command::Encode(a) => commands::encode(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Monitor(a) => commands::monitor(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
