use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Synthetic moire data, restoration training, flow refinement and
/// evaluation.
#[derive(Debug, Parser)]
#[command(name = "demoire", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Experiment directory; every relative path lives under it.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Dataset root (default: $DEMOIRE_DATA_ROOT, else <workdir>/data).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Run config (default: <workdir>/config.json, else built-in defaults).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a paired dataset.
    Synth(SynthArgs),
    /// Train the restoration network or the velocity field.
    Train(TrainArgs),
    /// Restore (and optionally flow-refine) a directory of mosaics.
    Refine(RefineArgs),
    /// PSNR/SSIM of predictions against targets.
    Eval(EvalArgs),
    /// Refinement PSNR per iteration as CSV.
    Sweep(SweepArgs),
    /// Attention memory/time scaling as CSV.
    Bench(BenchArgs),
    /// Configuration files.
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    /// Image side (power of two).
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Network,
    Velocity,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Target::Network)]
    pub target: Target,
    /// Continue from the last checkpoint of this target.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many epochs in this invocation.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Retrain with a component removed (network only).
    #[arg(long)]
    pub ablation: Option<String>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    #[arg(long)]
    pub t0: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Directory of `<id>_raw.png` mosaics (default: the dataset split).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Dataset split used when `--input` is absent.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Output directory (default: <workdir>/refined/<split>).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Network checkpoint (default: <workdir>/runs/network/best.ckpt).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Velocity checkpoint (default: <workdir>/runs/velocity/best.ckpt if present).
    #[arg(long)]
    pub velocity: Option<PathBuf>,
    /// Skip flow refinement.
    #[arg(long)]
    pub no_flow: bool,
    #[command(flatten)]
    pub flow: FlowArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions (default: <workdir>/refined/test).
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Targets (default: <data>/test).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Report directory (default: <workdir>/reports).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub velocity: Option<PathBuf>,
    /// Use an untrained (zero) velocity field as a control.
    #[arg(long)]
    pub zero_velocity: bool,
    /// CSV path (default: <workdir>/reports/sweep.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub flow: FlowArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Ascending sequence lengths.
    #[arg(long, value_delimiter = ',', default_value = "256,1024,4096")]
    pub lengths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "softmax,compressed,ttt")]
    pub variants: Vec<String>,
    #[arg(long, default_value_t = 32)]
    pub model_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub key_dim: usize,
    /// CSV path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Desk-scale defaults.
    Desk,
    /// Full-length epoch schedule.
    PaperScale,
    /// Tiny settings that finish in seconds.
    Smoke,
}

#[derive(Debug, Subcommand)]
pub enum ConfigCommand {
    /// Write a config file with every field spelled out.
    Init {
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        /// Destination (default: <workdir>/config.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
}

/// Failure classes mapped to exit codes.
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<demoire::Error> for Failure {
    fn from(e: demoire::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.global.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
