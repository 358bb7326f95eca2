mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sigwgan::Error;

#[derive(Debug, Parser)]
#[command(name = "sigwgan", version, about = "Signature-based generative modelling of time series")]
pub struct Cli {
    /// Seed for every random draw; overrides seeds found in config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory receiving outputs and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// JSON config for the subcommand (training config, simulator spec or
    /// evaluation config).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Close prices to windowed log-return paths with a chronological split.
    Ingest(IngestArgs),
    /// Simulate a market model into a path batch.
    Simulate(SimulateArgs),
    /// Per-sample signatures or log-signatures of a path batch.
    Sig(SigArgs),
    /// Train a generator.
    Train(TrainArgs),
    /// Score a trained generator against data.
    Evaluate(EvaluateArgs),
    /// Sig-W1 between two batches, or a GBM drift sweep.
    Distance(DistanceArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CSV with a date column and one close-price column per instrument.
    #[arg(long)]
    pub prices: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Fraction of windows, earliest first, that go to the training set.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulator spec (JSON); `--config` is used when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
    /// Override the number of observation stamps.
    #[arg(long)]
    pub stamps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SigArgs {
    /// Path batch CSV.
    #[arg(long)]
    pub paths: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    /// Augmentations, e.g. `scale:2:0.5,time,visibility`.
    #[arg(long, default_value = "")]
    pub pipeline: String,
    /// Log-signature coordinates on the Lyndon basis.
    #[arg(long)]
    pub log: bool,
    /// Also write the expected signature statistic.
    #[arg(long)]
    pub expected: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Override the configured iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Real data as a path batch CSV.
    #[arg(long, conflicts_with = "spec")]
    pub data: Option<PathBuf>,
    /// Real data simulated from this spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Samples to simulate with `--spec`.
    #[arg(long, default_value_t = 4000)]
    pub n: usize,
    /// Evaluate on this many stamps instead of the spec's own.
    #[arg(long, requires = "spec")]
    pub stamps: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub pipeline: Option<String>,
    #[arg(long)]
    pub n_fake: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    #[arg(long, required_unless_present = "sweep")]
    pub a: Option<PathBuf>,
    #[arg(long, required_unless_present = "sweep")]
    pub b: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value = "basepoint,time")]
    pub pipeline: String,
    /// Drift sweep between 1-d GBMs instead of comparing files.
    #[arg(long, conflicts_with_all = ["a", "b"])]
    pub sweep: bool,
    #[arg(long, default_value_t = 0.02)]
    pub theta1: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.02,0.045,0.07,0.095,0.12")]
    pub theta2: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub stamps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
}

/// Process exit status for a library error.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Shape(_)
        | Error::Domain(_)
        | Error::Config(_)
        | Error::NotLie { .. }
        | Error::IncomparableStats(_)
        | Error::IncompatibleModel(_) => 2,
        Error::Data(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
        Error::Numerical(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
