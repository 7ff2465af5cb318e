//! Command-line driver for data generation, training, calibration, evaluation and simulation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "carfollow", version, about = "Human-like car-following models")]
struct Cli {
    /// Only report errors on stderr.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    /// Report per-episode / per-generation progress on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic naturalistic-style dataset.
    GenData(GenDataArgs),
    /// Train or fit one model on a driver's calibration split.
    Train(TrainArgs),
    /// Calibrate IDM parameters for a driver with a genetic algorithm.
    CalibrateIdm(CalibrateArgs),
    /// Intra-driver, inter-driver or full comparison evaluation.
    Evaluate(EvaluateArgs),
    /// Roll a model out on one period file.
    Simulate(SimulateArgs),
    /// Extract car-following periods from a raw radar log.
    Extract(ExtractArgs),
    /// Label drivers aggressive/conservative by k-means on style features.
    Cluster(ClusterArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleArg {
    Aggressive,
    Conservative,
    /// Alternate aggressive and conservative drivers.
    Mixed,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelArg {
    /// DDPG with spacing reward.
    Ddpgs,
    /// DDPG with speed reward.
    Ddpgv,
    /// DDPG with speed reward and a 1 s reaction-time input window.
    Ddpgvrt,
    Nna,
    Rnn,
    Loess,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Intra,
    Inter,
    Compare,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct GenDataArgs {
    #[arg(long, value_enum, default_value = "mixed")]
    pub style: StyleArg,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    pub drivers: u32,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    pub periods: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of the follower's acceleration noise (m/s²).
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long)]
    pub driver: String,
    /// Dataset directory.
    #[arg(long, env = "CARFOLLOW_DATA")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the 70/30 calibration/validation split.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Training episodes (DDPG) or epochs (NNa, RNN).
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Learning-curve CSV; defaults to `<out>.curves.csv`.
    #[arg(long)]
    pub curves: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub driver: String,
    #[arg(long, env = "CARFOLLOW_DATA")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 300)]
    pub population: usize,
    #[arg(long, default_value_t = 300)]
    pub generations: usize,
    #[arg(long, default_value_t = 100)]
    pub stall: usize,
    #[arg(long, default_value_t = 12)]
    pub runs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct EvaluateArgs {
    /// Model files, one per (model, driver).
    #[arg(long, num_args = 1.., required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long, env = "CARFOLLOW_DATA")]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Overrides the split seed recorded in the model files.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct SimulateArgs {
    /// Model file, or `replay` to replay the recorded accelerations.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub period: PathBuf,
    /// Sampling step; inferred from the period's timestamps when omitted.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    /// Driver id for the extracted periods; defaults to the log's file stem.
    #[arg(long)]
    pub driver_id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct ClusterArgs {
    #[arg(long, env = "CARFOLLOW_DATA")]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();

    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::CalibrateIdm(a) => commands::calibrate_idm(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Extract(a) => commands::extract(a),
        Command::Cluster(a) => commands::cluster(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
