mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use sharpen_core::error::ErrorClass;

use config::{RunConfig, UsageError};

pub const THREADS_ENV: &str = "SHARPEN_FOCUS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "sharpen", version, about = "Attention-separation training and inspection for small CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with one confusable class pair.
    Synth(SynthArgs),
    /// Train a model and write a per-epoch log plus checkpoints.
    Train(TrainArgs),
    /// Write metrics.csv and per-sample attention overlap for a checkpoint.
    Eval(EvalArgs),
    /// Export attention heatmaps for the top-k predicted classes.
    Attend(AttendArgs),
    /// Write the KS chart of target versus confusing-class probabilities.
    Ks(KsArgs),
    /// Run the seeded baseline-versus-attention comparison on synthetic data.
    Trend(TrendArgs),
}

/// Flags shared by every command that resolves a run configuration.
#[derive(Debug, Args, Default)]
struct Common {
    /// `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// grad-cam or a-ch.
    #[arg(long)]
    mechanism: Option<String>,
    /// Train with the classification loss only.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// step or cosine.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    /// `base`, then the config file, then flags.
    fn resolve(&self, mut cfg: RunConfig, extra: &[(&str, Option<String>)]) -> Result<RunConfig> {
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("mechanism", self.mechanism.clone()),
            ("baseline", self.baseline.then(|| "true".to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("schedule", self.schedule.clone()),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
        ];
        for (key, value) in flags.iter().chain(extra) {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 7)]
    motif_size: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Training set directory (labels.csv plus images).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Held-out set for per-epoch test accuracy and best-checkpoint selection.
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Comma-separated block widths.
    #[arg(long)]
    channels: Option<String>,
    /// Comma-separated epochs at which the step schedule divides lr by 10.
    #[arg(long)]
    milestones: Option<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AttendArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated sample ids; defaults to the first `--limit` samples.
    #[arg(long)]
    ids: Option<String>,
    #[arg(long, default_value_t = 4)]
    limit: usize,
    /// Number of top predicted classes per sample.
    #[arg(long, default_value_t = 1)]
    top_k: usize,
    /// Heatmap side length in pixels; defaults to the input size.
    #[arg(long)]
    size: Option<usize>,
    /// Write grayscale PGM instead of colour PPM.
    #[arg(long)]
    gray: bool,
}

#[derive(Debug, Args)]
struct KsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of evenly spaced thresholds in [0, 1].
    #[arg(long, default_value_t = 101)]
    grid: usize,
}

#[derive(Debug, Args)]
struct TrendArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 200)]
    train_per_class: usize,
    #[arg(long, default_value_t = 100)]
    test_per_class: usize,
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Attend(a) => commands::attend(&a),
        Command::Ks(a) => commands::ks(&a),
        Command::Trend(a) => commands::trend(&a),
    }
}

/// 1 usage, 2 data, 3 numerical.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<sharpen_core::Error>() {
            return match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
