use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;
use vrinr::config::{self, ConfigBuilder};
use vrinr::gradcheck::{self, GradcheckOptions};
use vrinr::metrics::{mean_finite, psnr_per_frame, ssim_per_frame};
use vrinr::restorer;
use vrinr::trainer::{self, StepRecord};
use vrinr::video::{degrade_downsample, load_frames, save_frames};
use vrinr::{Checkpoint, Error, NoiseSpec, TrainConfig};

use crate::{DegradeArgs, EvaluateArgs, GradcheckArgs, NoiseArgs, RestoreArgs, TrainArgs};

impl NoiseArgs {
    fn spec(&self) -> Option<NoiseSpec> {
        match (self.gaussian, self.poisson) {
            (Some(sigma), _) => Some(NoiseSpec::Gaussian { sigma }),
            (_, Some(level)) => Some(NoiseSpec::Poisson { level }),
            _ => None,
        }
    }
}

fn noise_json(noise: Option<NoiseSpec>) -> serde_json::Value {
    match noise {
        None => serde_json::Value::Null,
        Some(NoiseSpec::Gaussian { sigma }) => json!({ "kind": "gaussian", "sigma": sigma }),
        Some(NoiseSpec::Poisson { level }) => json!({ "kind": "poisson", "lambda": level }),
    }
}

pub fn degrade(a: DegradeArgs) -> Result<()> {
    let hr = load_frames(&a.input)?;
    let mut lr = degrade_downsample(&hr, a.scale)?;
    let noise = a.noise.spec();
    if let Some(n) = &noise {
        lr = n.apply(&lr, a.seed)?;
    }
    save_frames(&lr, &a.out)?;
    let manifest = json!({
        "input": a.input.display().to_string(),
        "frames": lr.len(),
        "input_size": [hr.height(), hr.width()],
        "output_size": [lr.height(), lr.width()],
        "scale": a.scale,
        "noise": noise_json(noise),
        "seed": a.seed,
    });
    let path = a.out.join("degrade.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!(
        "{} frames {}x{} -> {}x{} in {}",
        lr.len(),
        hr.height(),
        hr.width(),
        lr.height(),
        lr.width(),
        a.out.display()
    );
    Ok(())
}

/// Bad flags or settings; exits with the usage status rather than 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

/// Command-line assignments carry line 0; report them by flag instead.
fn flag_error(e: Error) -> anyhow::Error {
    match e {
        Error::Config { line: 0, key, message } => usage(format!("{key}: {message}")),
        e @ Error::Config { .. } => usage(e.to_string()),
        other => other.into(),
    }
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match a.preset.as_str() {
        "desk" => TrainConfig::desk_scale(),
        _ => TrainConfig::default(),
    };
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg = config::parse_onto(cfg, &text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    let mut b = ConfigBuilder::new(cfg);
    for o in &a.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        b.set(0, k.trim(), v.trim()).map_err(flag_error)?;
    }
    if let Some(s) = a.scale {
        b.set(0, "train.scale", &s.to_string()).map_err(flag_error)?;
    }
    if let Some(e) = a.epochs {
        b.set(0, "train.epochs", &e.to_string()).map_err(flag_error)?;
    }
    if let Some(s) = a.seed {
        b.set(0, "train.seed", &s.to_string()).map_err(flag_error)?;
    }
    b.build().map_err(flag_error)
}

/// Prints one line per finished epoch and optionally every step as CSV.
struct TrainLog {
    csv: Option<BufWriter<File>>,
    epoch: Option<usize>,
    sums: (f64, f64, f64, usize),
}

impl TrainLog {
    fn new(path: Option<&Path>) -> Result<Self> {
        let csv = match path {
            Some(p) => {
                let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
                writeln!(w, "epoch,step,lr,loss,psnr")?;
                Some(w)
            }
            None => None,
        };
        Ok(Self {
            csv,
            epoch: None,
            sums: (0.0, 0.0, 0.0, 0),
        })
    }

    fn record(&mut self, r: &StepRecord) -> std::io::Result<()> {
        if self.epoch != Some(r.epoch) {
            self.flush_epoch();
            self.epoch = Some(r.epoch);
        }
        self.sums.0 = r.lr;
        self.sums.1 += r.loss;
        self.sums.2 += r.psnr;
        self.sums.3 += 1;
        if let Some(w) = &mut self.csv {
            writeln!(w, "{}", r.to_line())?;
        }
        Ok(())
    }

    fn flush_epoch(&mut self) {
        if let Some(e) = self.epoch {
            let n = self.sums.3.max(1) as f64;
            println!(
                "epoch {e} lr {:.3e} loss {:.6} psnr {:.2}",
                self.sums.0,
                self.sums.1 / n,
                self.sums.2 / n
            );
        }
        self.sums = (0.0, 0.0, 0.0, 0);
    }

    fn finish(mut self) -> std::io::Result<()> {
        self.flush_epoch();
        if let Some(w) = &mut self.csv {
            w.flush()?;
        }
        Ok(())
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let (start, until) = match &a.resume {
        Some(path) => {
            if a.config.is_some() || !a.overrides.is_empty() || a.scale.is_some() || a.seed.is_some() {
                return Err(usage("only --epochs may be given with --resume; the checkpoint fixes every other setting"));
            }
            let ckpt = Checkpoint::load(path)?;
            let until = a.epochs.unwrap_or(ckpt.config.epochs);
            (ckpt, until)
        }
        None => {
            let cfg = train_config(&a)?;
            let epochs = cfg.epochs;
            (Checkpoint::init(cfg)?, epochs)
        }
    };
    let clips = a
        .hr
        .iter()
        .map(load_frames)
        .collect::<vrinr::Result<Vec<_>>>()?;
    let clips = trainer::prepare_clips(&clips, start.config.scale)?;
    let mut log = TrainLog::new(a.log.as_deref())?;
    let mut io_error = None;
    let result = trainer::resume(start, &clips, until, &mut |r| {
        if let Err(e) = log.record(r) {
            io_error.get_or_insert(e);
        }
    });
    log.finish()?;
    if let Some(e) = io_error {
        return Err(e).context("writing the training log");
    }
    match result {
        Ok(ckpt) => {
            ckpt.save(&a.out)?;
            println!(
                "saved {} ({} parameters, {} epochs)",
                a.out.display(),
                ckpt.params.len(),
                ckpt.epoch
            );
            Ok(())
        }
        Err(Error::Diverged {
            epoch,
            step,
            last_finite,
        }) => {
            last_finite.save(&a.out)?;
            bail!(
                "training diverged at epoch {epoch}, step {step}; last finite state saved to {}",
                a.out.display()
            )
        }
        Err(e) => Err(e.into()),
    }
}

pub fn restore(a: RestoreArgs) -> Result<()> {
    let model = Checkpoint::load(&a.ckpt)?.model()?;
    let mut lr = load_frames(&a.lr)?;
    if let Some(n) = a.noise.spec() {
        lr = n.apply(&lr, a.seed)?;
    }
    let out = restorer::restore(&model, &lr, a.scale)?;
    save_frames(&out, &a.out)?;
    println!(
        "{} frames {}x{} -> {}x{} in {}",
        out.len(),
        lr.height(),
        lr.width(),
        out.height(),
        out.width(),
        a.out.display()
    );
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let pred = load_frames(&a.pred)?;
    let gt = load_frames(&a.gt)?;
    if pred.len() != gt.len() {
        bail!("{} predicted frames but {} ground-truth frames", pred.len(), gt.len());
    }
    let psnr = psnr_per_frame(&pred, &gt)?;
    let ssim = ssim_per_frame(&pred, &gt)?;
    let mean_psnr = mean_finite(&psnr);
    let mean_ssim = ssim.iter().sum::<f64>() / ssim.len() as f64;

    let mut table = String::from("frame,psnr,ssim\n");
    for (i, (p, s)) in psnr.iter().zip(&ssim).enumerate() {
        table.push_str(&format!("{i},{p:.4},{s:.6}\n"));
    }
    table.push_str(&format!("mean,{mean_psnr:.4},{mean_ssim:.6}\n"));
    std::fs::write(&a.report, table).with_context(|| format!("writing {}", a.report.display()))?;

    let infinite = psnr.iter().filter(|p| p.is_infinite()).count();
    println!("frames     {}", psnr.len());
    println!("PSNR mean  {mean_psnr:.4} dB");
    if infinite > 0 {
        println!("           {infinite} identical frame(s) excluded from the mean");
    }
    println!("SSIM mean  {mean_ssim:.6}");
    println!("report     {}", a.report.display());
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let opts = GradcheckOptions {
        seed: a.seed,
        fault: a.inject_fault,
        ..GradcheckOptions::default()
    };
    let report = if a.modules_only {
        gradcheck::run_modules(&opts)?
    } else {
        gradcheck::run(&opts)?
    };
    print!("{}", report.to_table());
    let failed: Vec<String> = report
        .failures()
        .map(|g| format!("{} ({}[{}], rel err {:.3e})", g.group, g.worst_param, g.worst_index, g.worst_error))
        .collect();
    if failed.is_empty() {
        println!("all {} groups within {:e}", report.groups.len(), report.tolerance);
        Ok(())
    } else {
        bail!("gradient check failed: {}", failed.join(", "))
    }
}
