//! Per-video fitting: LR-HR pairs, coordinate batches, Adam with a halving
//! schedule, and the binary checkpoint format.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config;
use crate::error::{Error, Result};
use crate::model::{Architecture, Model, ModelConfig, Sample};
use crate::nn::{AdamState, ParamLayout};
use crate::pea::LossKind;
use crate::video::{degrade_downsample, make_coord_grid, resize_sequence, CoordGrid, FrameSequence};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VRINR001";

/// Stream of the batch sampler; stream 0 of the same seed initialises parameters.
const BATCH_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub scale: f64,
    pub epochs: usize,
    pub batch_coords: usize,
    pub lr0: f64,
    pub lr_halve_every: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scale: 4.0,
            epochs: 300,
            batch_coords: 4096,
            lr0: 1e-4,
            lr_halve_every: 100,
            seed: 0,
            loss: LossKind::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Settings for clips a few dozen pixels across on one CPU core: a
    /// shorter, hotter schedule and smaller tables than the defaults.
    pub fn desk_scale() -> Self {
        Self {
            epochs: 100,
            batch_coords: 1024,
            lr0: 6e-3,
            lr_halve_every: 30,
            model: ModelConfig {
                table_log2_size: 14,
                ..ModelConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.scale > 1.0) || !self.scale.is_finite() {
            return bad(format!("training scale must be > 1, got {}", self.scale));
        }
        if self.batch_coords == 0 || self.lr_halve_every == 0 {
            return bad("batch size and halving period must be positive".into());
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.lr0));
        }
        if let LossKind::Pea(p) = &self.loss {
            p.validate()?;
        }
        self.model.validate()
    }

    /// `lr0 * 0.5^floor(epoch / lr_halve_every)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = (epoch / self.lr_halve_every).min(i32::MAX as usize) as i32;
        self.lr0 * 0.5f64.powi(halvings)
    }
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: RngState,
}

impl Checkpoint {
    /// Freshly initialised parameters and optimiser for `config`.
    pub fn init(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::new(config.model.clone())?;
        let params = arch.init_params(config.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(BATCH_STREAM);
        Ok(Self {
            adam: AdamState::new(params.len()),
            layout: arch.layout,
            params,
            epoch: 0,
            rng: RngState::capture(&rng),
            config,
        })
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let arch = Architecture::new(self.config.model.clone())?;
        if arch.layout != self.layout {
            return Err(Error::Checkpoint("parameter layout does not match the stored model config".into()));
        }
        Ok(arch)
    }

    /// The trained network held by this checkpoint.
    pub fn model(&self) -> Result<Model> {
        Model::from_params(self.config.model.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_bytes(&mut out, config::to_text(&self.config).as_bytes());
        put_u64(&mut out, self.layout.entries().len() as u64);
        for e in self.layout.entries() {
            put_bytes(&mut out, e.name.as_bytes());
            put_u64(&mut out, e.shape.len() as u64);
            for &d in &e.shape {
                put_u64(&mut out, d as u64);
            }
            put_u64(&mut out, e.offset as u64);
        }
        put_f64s(&mut out, &self.params);
        for v in [self.adam.beta1, self.adam.beta2, self.adam.eps] {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        put_u64(&mut out, self.adam.step_count);
        put_f64s(&mut out, &self.adam.m);
        put_f64s(&mut out, &self.adam.v);
        put_u64(&mut out, self.epoch as u64);
        out.extend_from_slice(&self.rng.seed);
        put_u64(&mut out, self.rng.stream);
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, expected VRINR001".into()));
        }
        let text = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
        let config = config::parse(&text)?;
        let n_entries = r.len()?;
        let mut layout = ParamLayout::new();
        for _ in 0..n_entries {
            let name = String::from_utf8(r.bytes()?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = r.len()?;
            let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let offset = r.len()?;
            if layout.push(name.clone(), shape) != offset {
                return Err(Error::Checkpoint(format!("tensor {name} has an inconsistent offset")));
            }
        }
        let params = r.f64s()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let eps = r.f64()?;
        let step_count = r.u64()?;
        let m = r.f64s()?;
        let v = r.f64s()?;
        let epoch = r.len()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if params.len() != layout.len() || m.len() != params.len() || v.len() != params.len() {
            return Err(Error::Checkpoint("parameter and optimiser lengths disagree with the layout".into()));
        }
        let ckpt = Self {
            config,
            layout,
            params,
            adam: AdamState {
                m,
                v,
                step_count,
                beta1,
                beta2,
                eps,
            },
            epoch,
            rng: RngState { seed, stream, word_pos },
        };
        ckpt.architecture()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u64(out, b.len() as u64);
    out.extend_from_slice(b);
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    put_u64(out, v.len() as u64);
    for x in v {
        out.extend_from_slice(&x.to_bits().to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("length {v} too large")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
}

/// `(lr, hr)` with `lr = degrade_downsample(hr, scale)`.
pub fn build_pairs(hr: &FrameSequence, scale: f64) -> Result<(FrameSequence, FrameSequence)> {
    Ok((degrade_downsample(hr, scale)?, hr.clone()))
}

/// Coordinates and their ground-truth colours.
pub type Batch = (Vec<[f64; 3]>, Vec<[f64; 3]>);

/// `n` distinct coordinates drawn uniformly, with their ground-truth colours.
pub fn sample_batch(
    grid: &CoordGrid,
    gt: &FrameSequence,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    if gt.dims() != (grid.frames, grid.height, grid.width) {
        return Err(Error::ShapeMismatch("grid and ground truth differ in size".into()));
    }
    let picks = draw_indices(grid.len(), n, rng)?;
    Ok(picks
        .into_iter()
        .map(|i| {
            let (t, r, c) = grid.position(i);
            (grid.coords[i], gt.frames[t].pixel(r, c))
        })
        .unzip())
}

fn draw_indices(total: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if n == 0 || n > total {
        return Err(Error::InvalidArgument(format!("batch of {n} from {total} coordinates")));
    }
    Ok(index::sample(rng, total, n).into_vec())
}

/// One optimiser step as reported to the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// PSNR of the batch prediction against ground truth.
    pub psnr: f64,
}

impl StepRecord {
    /// `epoch,step,lr,loss,psnr`
    pub fn to_line(&self) -> String {
        format!("{},{},{:e},{:.8e},{:.4}", self.epoch, self.step, self.lr, self.loss, self.psnr)
    }
}

/// A training clip: HR ground truth with its LR input upsampled back to HR size.
#[derive(Debug, Clone)]
pub struct TrainingClip {
    pub hr: FrameSequence,
    pub upsampled: FrameSequence,
    pub grid: CoordGrid,
}

impl TrainingClip {
    pub fn new(hr: FrameSequence, scale: f64) -> Result<Self> {
        let (lr, hr) = build_pairs(&hr, scale)?;
        let (t, h, w) = hr.dims();
        let upsampled = resize_sequence(&lr, h, w)?;
        let grid = make_coord_grid(t, h, w)?;
        Ok(Self { hr, upsampled, grid })
    }
}

/// Fits a fresh model to one video.
pub fn fit(hr: &FrameSequence, cfg: &TrainConfig, log: &mut dyn FnMut(&StepRecord)) -> Result<Checkpoint> {
    fit_clips(std::slice::from_ref(hr), cfg, log)
}

/// Fits one model to several clips sharing the same inner loop.
pub fn fit_clips(hr: &[FrameSequence], cfg: &TrainConfig, log: &mut dyn FnMut(&StepRecord)) -> Result<Checkpoint> {
    let ckpt = Checkpoint::init(cfg.clone())?;
    let clips = prepare_clips(hr, cfg.scale)?;
    resume(ckpt, &clips, cfg.epochs, log)
}

pub fn prepare_clips(hr: &[FrameSequence], scale: f64) -> Result<Vec<TrainingClip>> {
    if hr.is_empty() {
        return Err(Error::InvalidArgument("no training clips".into()));
    }
    hr.iter().map(|v| TrainingClip::new(v.clone(), scale)).collect()
}

/// Continues training from `ckpt` until `until_epoch` epochs are complete.
pub fn resume(
    mut ckpt: Checkpoint,
    clips: &[TrainingClip],
    until_epoch: usize,
    log: &mut dyn FnMut(&StepRecord),
) -> Result<Checkpoint> {
    ckpt.config.validate()?;
    let arch = ckpt.architecture()?;
    let inputs: Vec<&FrameSequence> = clips.iter().map(|c| &c.upsampled).collect();
    let sizes: Vec<usize> = clips.iter().map(|c| c.grid.len()).collect();
    let total: usize = sizes.iter().sum();
    let batch = ckpt.config.batch_coords.min(total);
    let steps = total.div_ceil(batch);
    let mut rng = ckpt.rng.restore();
    let mut dense = vec![0.0; ckpt.params.len()];

    while ckpt.epoch < until_epoch {
        let epoch = ckpt.epoch;
        let lr = ckpt.config.lr_at(epoch);
        for step in 0..steps {
            let picks = draw_indices(total, batch, &mut rng)?;
            let samples: Vec<Sample> = picks.into_iter().map(|i| locate(clips, &sizes, i)).collect();
            let out = arch.batch_gradient(&ckpt.params, &inputs, &samples, &ckpt.config.loss)?;
            let diverged = |c: &Checkpoint| Error::Diverged {
                epoch,
                step,
                last_finite: Box::new(c.clone()),
            };
            if !out.loss.is_finite() {
                return Err(diverged(&ckpt));
            }
            dense.fill(0.0);
            out.grad.add_to(&mut dense);
            match ckpt.adam.step(&mut ckpt.params, &dense, lr) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { .. }) => return Err(diverged(&ckpt)),
                Err(e) => return Err(e),
            }
            ckpt.rng = RngState::capture(&rng);
            log(&StepRecord {
                epoch,
                step,
                lr,
                loss: out.loss,
                psnr: if out.mse > 0.0 { -10.0 * out.mse.log10() } else { f64::INFINITY },
            });
        }
        ckpt.epoch += 1;
    }
    Ok(ckpt)
}

fn locate(clips: &[TrainingClip], sizes: &[usize], mut i: usize) -> Sample {
    for (clip, (c, &n)) in clips.iter().zip(sizes).enumerate() {
        if i < n {
            let (t, r, col) = c.grid.position(i);
            return Sample {
                clip,
                coord: c.grid.coords[i],
                target: c.hr.frames[t].pixel(r, col),
            };
        }
        i -= n;
    }
    unreachable!("index beyond the total coordinate count")
}

/// Every HR coordinate of a clip as a training sample.
pub fn all_samples(clip: &TrainingClip, clip_index: usize) -> Vec<Sample> {
    (0..clip.grid.len())
        .map(|i| {
            let (t, r, c) = clip.grid.position(i);
            Sample {
                clip: clip_index,
                coord: clip.grid.coords[i],
                target: clip.hr.frames[t].pixel(r, c),
            }
        })
        .collect()
}
