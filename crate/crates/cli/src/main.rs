//! `mlbin` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlbin::ErrorClass;

#[derive(Debug, Parser)]
#[command(name = "mlbin", version, about = "Multi-level binarized LSTM toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic oscillation dataset.
    Synth(SynthArgs),
    /// Fit the ridge readout on a dataset and save the model.
    Train(TrainArgs),
    /// Quantize a full-precision model.
    Quantize(QuantizeArgs),
    /// Report classification accuracy.
    Eval(EvalArgs),
    /// Search per-group scaling settings.
    Explore(ExploreArgs),
    /// Gate-level area and delay of the MAC.
    Cost(CostArgs),
    /// Full precision vs fixed point vs multi-level, side by side.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct WorkerArgs {
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 600)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    timesteps: usize,
    #[arg(long, default_value_t = 32)]
    features: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output model directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    /// Start from this model's LSTM weights instead of a random draw.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-2)]
    lambda: f64,
    /// `mean` or `final`.
    #[arg(long, default_value = "mean")]
    feature: String,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[command(flatten)]
    workers: WorkerArgs,
}

#[derive(Debug, Args)]
struct ScalingArgs {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output model directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scaling: ScalingArgs,
    /// Start from error-minimizing exponents measured on this dataset.
    #[arg(long)]
    calibrate: Option<PathBuf>,
    #[arg(long, default_value_t = 5, requires = "calibrate")]
    x_levels: u32,
    #[arg(long, default_value_t = 5, requires = "calibrate")]
    w_levels: u32,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Write `class,correct,total,accuracy` rows here.
    #[arg(long)]
    per_class: Option<PathBuf>,
    #[command(flatten)]
    workers: WorkerArgs,
}

#[derive(Debug, Args)]
struct ExploreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Exploration spec file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// `key=value` override, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Seed the spec with suggested exponents at these level counts.
    #[arg(long, value_delimiter = ',')]
    suggest_levels: Vec<u32>,
    /// Per-config results CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Best config as a key-value file.
    #[arg(long)]
    best: Option<PathBuf>,
    /// `X=<k|n:k>,B=<k|n:k>`: emit the Wfwd × Wrec accuracy table at these settings.
    #[arg(long)]
    slice: Option<String>,
    /// Where the slice goes; stdout if omitted.
    #[arg(long, requires = "slice")]
    slice_out: Option<PathBuf>,
    #[command(flatten)]
    workers: WorkerArgs,
}

#[derive(Debug, Args)]
struct CostArgs {
    /// Key-value file overriding gate constants.
    #[arg(long)]
    constants: Option<PathBuf>,
    /// Full `1..=M × 1..=N` grid instead of the six reference configs.
    #[arg(long, value_name = "M,N")]
    grid: Option<String>,
    /// Dot-product length.
    #[arg(long, default_value_t = 32)]
    k: usize,
    /// `fp` or `max55`.
    #[arg(long, default_value = "fp")]
    normalize: String,
    /// Delay of the multiplier alone.
    #[arg(long)]
    multiplier_only: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    model: PathBuf,
    /// Evaluation dataset.
    #[arg(long)]
    data: PathBuf,
    /// Labeled data for choosing multi-level exponents by accuracy; without
    /// it exponents come from error minimization on `--data` inputs.
    #[arg(long)]
    tune_data: Option<PathBuf>,
    /// `m:n` pairs of input and weight widths.
    #[arg(long, value_delimiter = ',', default_value = "3:3,4:4,5:5")]
    pairs: Vec<String>,
    #[arg(long, default_value_t = 1)]
    radius: i32,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    workers: WorkerArgs,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Io => 3,
        ErrorClass::Validation => 4,
        ErrorClass::Config => 5,
        ErrorClass::Numeric => 6,
        ErrorClass::Format => 7,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Quantize(a) => commands::quantize(a),
        Command::Eval(a) => commands::eval(a),
        Command::Explore(a) => commands::explore(a),
        Command::Cost(a) => commands::cost(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
