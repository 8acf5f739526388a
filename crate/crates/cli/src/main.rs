mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fgn_core::{Ablation, Variant};

#[derive(Parser)]
#[command(name = "fgn", version, about = "FocalGatedNet gait forecasting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic gait recording as CSV.
    Synth(SynthArgs),
    /// Train one model and report test metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Train every ablation variant at every horizon.
    Ablate(AblateArgs),
    /// Time forward passes of a checkpoint.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Gait cycles of one second each.
    #[arg(long, default_value_t = 60, value_parser = clap::value_parser!(u64).range(1..))]
    pub cycles: u64,
    /// Noise standard deviation relative to each channel's amplitude.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub rate_hz: u64,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Run file; the toy preset on synthetic data when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub horizon: Option<u64>,
    /// focalgatednet | transformer | dlinear | nlinear
    #[arg(long, value_parser = snake_case::<Variant>)]
    pub variant: Option<Variant>,
    /// glu_dcf | dcf_only | glu_only
    #[arg(long, value_parser = snake_case::<Ablation>)]
    pub ablation: Option<Ablation>,
    /// Overrides `train.seed`.
    #[arg(long, env = "FGN_SEED")]
    pub seed: Option<u64>,
    /// CSV recording, overriding `data.path`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory, overriding `out` in the run file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run file for the data; defaults to `config.toml` beside the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory for report.json and report.txt; stdout only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated horizons in samples.
    #[arg(long, value_delimiter = ',', default_values_t = fgn_core::experiment::ABLATION_HORIZONS)]
    pub horizons: Vec<usize>,
    #[arg(long, env = "FGN_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses an enum from its config-file spelling.
fn snake_case<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
