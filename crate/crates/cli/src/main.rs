use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Per-video coordinate-network restoration: degrade, fit, restore, score.
#[derive(Debug, Parser)]
#[command(name = "vrinr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bicubic-downsample a frame directory, optionally adding noise.
    Degrade(DegradeArgs),
    /// Fit a model to one or more HR clips.
    Train(TrainArgs),
    /// Restore LR frames at any scale with a trained checkpoint.
    Restore(RestoreArgs),
    /// Per-frame PSNR and SSIM of predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
#[group(multiple = false)]
pub struct NoiseArgs {
    /// Additive Gaussian noise, sigma on the 0-255 scale.
    #[arg(long, value_name = "SIGMA")]
    gaussian: Option<f64>,
    /// Poisson noise with `level` photons at full intensity.
    #[arg(long, value_name = "LAMBDA")]
    poisson: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    scale: f64,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// HR frame directory; repeat to fit several clips jointly.
    #[arg(long, value_name = "DIR", required = true)]
    hr: Vec<PathBuf>,
    #[arg(long, value_name = "CKPT")]
    out: PathBuf,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Key-value config file applied on top of the preset.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Extra `key=value` assignment, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Base settings: `paper` (full-size defaults) or `desk` (small clips, one core).
    #[arg(long, default_value = "paper", value_parser = ["paper", "desk"])]
    preset: String,
    /// Continue from a checkpoint instead of a fresh initialisation.
    #[arg(long, value_name = "CKPT")]
    resume: Option<PathBuf>,
    /// Per-step CSV log.
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
    /// Serial reductions on a single worker thread.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    #[arg(long, value_name = "CKPT")]
    ckpt: PathBuf,
    #[arg(long, value_name = "DIR")]
    lr: PathBuf,
    #[arg(long)]
    scale: f64,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Noise applied to the LR input before restoring.
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "DIR")]
    pred: PathBuf,
    #[arg(long, value_name = "DIR")]
    gt: PathBuf,
    #[arg(long, value_name = "FILE")]
    report: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt the analytic gradient of one group (checks the checker).
    #[arg(long, hide = true, value_name = "GROUP")]
    inject_fault: Option<String>,
    /// Skip the end-to-end model check.
    #[arg(long, hide = true)]
    modules_only: bool,
}

/// Sizes the global rayon pool from `VRINR_THREADS`, or one thread when
/// `serial` is set.
fn configure_threads(serial: bool) -> Result<(), String> {
    let threads = if serial {
        Some(1)
    } else {
        match std::env::var("VRINR_THREADS") {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Some(n),
                _ => return Err(format!("VRINR_THREADS must be a positive integer, got `{v}`")),
            },
            Err(_) => None,
        }
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let serial = matches!(&cli.command, Command::Train(a) if a.deterministic);
    if let Err(e) = configure_threads(serial) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Degrade(a) => commands::degrade(a),
        Command::Train(a) => commands::train(a),
        Command::Restore(a) => commands::restore(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<commands::UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
