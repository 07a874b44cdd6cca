//! The full coordinate network: per-level texture encoders, hash fields and
//! weight networks, top-down gates, and the colour decoder, all reading one
//! flat parameter vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::{self, LevelFeatures};
use crate::hash::{self, HashTable, MAX_STT_DIM};
use crate::nn::{glorot_init, Activation, KinkState, Mlp2, Mlp2Cache, Mlp2Shape, ParamLayout};
use crate::pea::{pixel_error, pixel_grad, LossKind};
use crate::stt::{self, LevelConfig, TextureCode};
use crate::video::{nearest_index, FrameSequence};

/// Hash-table entries are drawn uniformly from `[-TABLE_INIT, TABLE_INIT]`.
pub const TABLE_INIT: f64 = 1e-4;

/// Samples per gradient chunk. Chunks are reduced in index order, so the
/// summed gradient does not depend on the thread count.
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Finest level first; patch sizes strictly increase with level.
    pub levels: Vec<LevelConfig>,
    /// Texture code length `F`; the STT code has `3 + F` components.
    pub feature_code_len: usize,
    pub table_log2_size: u32,
    pub feat_dim: usize,
    pub hidden: usize,
    /// Top-down gating between levels; off means every gate is 1.
    pub attention: bool,
    /// Gate from the coarser level's raw feature instead of its refined one.
    pub raw_coarse_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: vec![
                LevelConfig {
                    patch_size: 3,
                    grid_resolution: 64,
                },
                LevelConfig {
                    patch_size: 5,
                    grid_resolution: 32,
                },
                LevelConfig {
                    patch_size: 7,
                    grid_resolution: 16,
                },
            ],
            feature_code_len: 3,
            table_log2_size: 16,
            feat_dim: 4,
            hidden: 64,
            attention: true,
            raw_coarse_attention: false,
        }
    }
}

impl ModelConfig {
    pub fn stt_dim(&self) -> usize {
        3 + self.feature_code_len
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.levels.is_empty() {
            return bad("at least one level is required".into());
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.patch_size % 2 == 0 {
                return bad(format!("level {} patch size {} is not odd", i + 1, l.patch_size));
            }
            if l.grid_resolution < 2 {
                return bad(format!("level {} grid resolution must be >= 2", i + 1));
            }
            if i > 0 && l.patch_size <= self.levels[i - 1].patch_size {
                return bad("patch sizes must strictly increase from finest to coarsest level".into());
            }
        }
        if self.feature_code_len == 0 || self.stt_dim() > MAX_STT_DIM {
            return bad(format!(
                "feature code length must be in 1..={}, got {}",
                MAX_STT_DIM - 3,
                self.feature_code_len
            ));
        }
        if self.table_log2_size == 0 || self.table_log2_size > 30 {
            return bad(format!("table log2 size must be in 1..=30, got {}", self.table_log2_size));
        }
        if self.feat_dim == 0 || self.hidden == 0 {
            return bad("feature and hidden widths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSlot {
    pub name: String,
    pub shape: Mlp2Shape,
    pub offset: usize,
}

impl MlpSlot {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.shape.num_params()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableSlot {
    pub name: String,
    pub offset: usize,
    pub log2_size: u32,
    pub feat_dim: usize,
}

impl TableSlot {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + (1usize << self.log2_size) * self.feat_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSlots {
    pub config: LevelConfig,
    pub texture: MlpSlot,
    pub weights: MlpSlot,
    /// Gate network fed by the next-coarser level; absent on the coarsest.
    pub attention: Option<MlpSlot>,
    pub table: TableSlot,
}

/// Shapes and parameter offsets for a [`ModelConfig`].
///
/// Networks come first in the flat vector and hash tables last, so the
/// dense region `0..mlp_len()` holds every network parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub levels: Vec<LevelSlots>,
    pub color: MlpSlot,
    mlp_len: usize,
}

/// Activations of one level for one pixel.
#[derive(Debug, Clone)]
pub struct LevelTape {
    pub texture: Mlp2Cache,
    pub stt: Vec<f64>,
    pub lower: Vec<u32>,
    pub upper: Vec<u32>,
    pub slots: Vec<usize>,
    pub weights: Mlp2Cache,
    pub feats: Vec<f64>,
    pub v: Vec<f64>,
}

/// Everything one pixel's forward pass records for its reverse pass.
#[derive(Debug, Clone)]
pub struct PixelTape {
    pub levels: Vec<LevelTape>,
    /// Gate caches per level (None on the coarsest or with attention off).
    pub gates: Vec<Option<Mlp2Cache>>,
    pub refined: Vec<Vec<f64>>,
    pub color: Mlp2Cache,
}

impl PixelTape {
    pub fn rgb(&self) -> [f64; 3] {
        let o = self.color.output();
        [o[0], o[1], o[2]]
    }

    pub fn fused(&self) -> Vec<f64> {
        self.refined.iter().flatten().copied().collect()
    }
}

/// Pipeline stages in evaluation order; level indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Texture(usize),
    Weights(usize),
    Table(usize),
    Gates,
    Color,
}

/// Gradient of a batch: dense over the network region, sparse over tables.
#[derive(Debug, Clone, Default)]
pub struct Gradient {
    pub mlp: Vec<f64>,
    pub table: Vec<(usize, f64)>,
}

impl Gradient {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            mlp: vec![0.0; arch.mlp_len],
            table: Vec::new(),
        }
    }

    /// Adds this gradient into a full-length dense vector.
    pub fn add_to(&self, full: &mut [f64]) {
        for (f, g) in full.iter_mut().zip(&self.mlp) {
            *f += g;
        }
        for &(i, g) in &self.table {
            full[i] += g;
        }
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        self.add_to(&mut out);
        out
    }
}

/// One supervised coordinate: which input clip, where, and the target colour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub clip: usize,
    pub coord: [f64; 3],
    pub target: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub loss: f64,
    /// Plain per-pixel MSE over the batch, for PSNR logging.
    pub mse: f64,
    pub grad: Gradient,
}

impl Architecture {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.stt_dim();
        let h = config.hidden;
        let fd = config.feat_dim;
        let n_levels = config.levels.len();
        let mut layout = ParamLayout::new();

        let mlp = |layout: &mut ParamLayout, name: String, shape: Mlp2Shape| {
            let offset = layout.push_mlp(&name, &shape);
            MlpSlot { name, shape, offset }
        };

        let mut partial = Vec::with_capacity(n_levels);
        for (i, lc) in config.levels.iter().enumerate() {
            let l = i + 1;
            let texture = mlp(
                &mut layout,
                format!("texture.{l}"),
                Mlp2Shape::new(3 * lc.patch_size * lc.patch_size, h, config.feature_code_len, Activation::Tanh),
            );
            let weights = mlp(
                &mut layout,
                format!("hash_mlp.{l}"),
                Mlp2Shape::new(3 * d, h, 1 << d, Activation::Softmax),
            );
            partial.push((*lc, texture, weights));
        }
        let mut attention = vec![None; n_levels];
        if config.attention {
            for (i, slot) in attention.iter_mut().enumerate().take(n_levels.saturating_sub(1)) {
                *slot = Some(mlp(
                    &mut layout,
                    format!("attention.{}", i + 1),
                    Mlp2Shape::new(fd, h, fd, Activation::Sigmoid),
                ));
            }
        }
        let color = mlp(
            &mut layout,
            "color".to_string(),
            Mlp2Shape::new(n_levels * fd, h, 3, Activation::Sigmoid),
        );
        let mlp_len = layout.len();
        let mut levels = Vec::with_capacity(n_levels);
        for (i, ((lc, texture, weights), attention)) in partial.into_iter().zip(attention).enumerate() {
            let name = format!("table.{}", i + 1);
            let offset = layout.push(format!("{name}.entries"), vec![1 << config.table_log2_size, fd]);
            levels.push(LevelSlots {
                config: lc,
                texture,
                weights,
                attention,
                table: TableSlot {
                    name,
                    offset,
                    log2_size: config.table_log2_size,
                    feat_dim: fd,
                },
            });
        }
        Ok(Self {
            config,
            layout,
            levels,
            color,
            mlp_len,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn mlp_len(&self) -> usize {
        self.mlp_len
    }

    /// Glorot networks and small uniform tables, from one seeded stream in
    /// layout order.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.num_params()];
        for slot in self.mlp_slots() {
            glorot_init(&slot.shape, &mut rng, &mut params[slot.range()]);
        }
        for level in &self.levels {
            for v in &mut params[level.table.range()] {
                *v = rng.random_range(-TABLE_INIT..=TABLE_INIT);
            }
        }
        params
    }

    /// Network slots in layout order.
    pub fn mlp_slots(&self) -> Vec<&MlpSlot> {
        let mut out: Vec<&MlpSlot> = Vec::new();
        for l in &self.levels {
            out.push(&l.texture);
            out.push(&l.weights);
        }
        out.extend(self.levels.iter().filter_map(|l| l.attention.as_ref()));
        out.push(&self.color);
        out.sort_by_key(|s| s.offset);
        out
    }

    pub fn mlp<'a>(&'a self, slot: &'a MlpSlot, params: &'a [f64]) -> Mlp2<'a> {
        Mlp2 {
            name: &slot.name,
            shape: slot.shape,
            params: &params[slot.range()],
        }
    }

    pub fn table<'a>(&self, slot: &TableSlot, params: &'a [f64]) -> HashTable<'a> {
        HashTable {
            log2_size: slot.log2_size,
            feat_dim: slot.feat_dim,
            entries: &params[slot.range()],
        }
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        Ok(())
    }

    /// Texture code of level `level` (1-based) for a flattened patch.
    pub fn encode_texture(&self, params: &[f64], level: usize, patch: &[f64]) -> Result<TextureCode> {
        let slots = level
            .checked_sub(1)
            .and_then(|i| self.levels.get(i))
            .ok_or_else(|| Error::InvalidArgument(format!("level {level} out of range 1..={}", self.levels.len())))?;
        Ok(stt::encode_texture(&self.mlp(&slots.texture, params), patch)?.0)
    }

    /// Full forward pass for one coordinate against frames already resized
    /// to the target resolution.
    pub fn forward_pixel(&self, params: &[f64], frames: &FrameSequence, coord: [f64; 3]) -> Result<PixelTape> {
        self.forward_impl(params, frames, coord, None)
    }

    /// Forward pass that copies every intermediate of `base` that cannot
    /// depend on parameters of `stage` or later. `base` must come from the
    /// same coordinate and frames.
    pub fn forward_pixel_from(
        &self,
        params: &[f64],
        frames: &FrameSequence,
        coord: [f64; 3],
        base: &PixelTape,
        stage: Stage,
    ) -> Result<PixelTape> {
        self.forward_impl(params, frames, coord, Some((base, stage)))
    }

    fn forward_impl(
        &self,
        params: &[f64],
        frames: &FrameSequence,
        coord: [f64; 3],
        reuse: Option<(&PixelTape, Stage)>,
    ) -> Result<PixelTape> {
        self.check_params(params)?;
        let (t_len, h, w) = frames.dims();
        let frame = &frames.frames[nearest_index(coord[2], t_len)];
        let row = nearest_index(coord[1], h);
        let col = nearest_index(coord[0], w);
        let fd = self.config.feat_dim;

        let mut levels = Vec::with_capacity(self.levels.len());
        for (li, slots) in self.levels.iter().enumerate() {
            let (base, stage) = match reuse {
                None => {
                    let patch = stt::extract_patch_at(frame, row, col, slots.config.patch_size);
                    let (xi, texture) = stt::encode_texture(&self.mlp(&slots.texture, params), &patch)?;
                    let code = stt::assemble_stt(coord, &xi)?;
                    levels.push(self.level_tail(params, slots, texture, code.0)?);
                    continue;
                }
                Some((base, stage)) => (&base.levels[li], stage),
            };
            let level = match stage {
                Stage::Texture(l) if l == li => {
                    let (xi, texture) =
                        stt::encode_texture(&self.mlp(&slots.texture, params), &base.texture.input)?;
                    let code = stt::assemble_stt(coord, &xi)?;
                    self.level_tail(params, slots, texture, code.0)?
                }
                Stage::Weights(l) if l == li => self.level_tail(params, slots, base.texture.clone(), base.stt.clone())?,
                Stage::Table(l) if l == li => {
                    let feats = hash::lookup(&base.slots, &self.table(&slots.table, params));
                    let v = hash::interpolate(base.weights.output(), &feats, fd)?;
                    LevelTape {
                        feats,
                        v,
                        ..base.clone()
                    }
                }
                _ => base.clone(),
            };
            levels.push(level);
        }

        let n = levels.len();
        let mut refined: Vec<Vec<f64>> = levels.iter().map(|l| l.v.clone()).collect();
        let mut gates = vec![None; n];
        if self.config.attention {
            for l in (0..n.saturating_sub(1)).rev() {
                let slot = self.levels[l].attention.as_ref().expect("gate network on non-coarsest level");
                let source = if self.config.raw_coarse_attention {
                    &levels[l + 1].v
                } else {
                    &refined[l + 1]
                };
                let gate = fusion::attention_weights(&self.mlp(slot, params), source)?;
                refined[l] = fusion::refine(&levels[l].v, gate.output())?;
                gates[l] = Some(gate);
            }
        }
        let features = LevelFeatures(refined);
        let v_hr = fusion::fuse(&features);
        let color = fusion::decode_color(&self.mlp(&self.color, params), &v_hr)?;
        Ok(PixelTape {
            levels,
            gates,
            refined: features.0,
            color,
        })
    }

    /// Quantisation, learned interpolation and lookup for one level.
    fn level_tail(&self, params: &[f64], slots: &LevelSlots, texture: Mlp2Cache, stt: Vec<f64>) -> Result<LevelTape> {
        let nb = hash::quantize_vertices(&stt, slots.config.grid_resolution)?;
        let slot_ids = nb.slots(slots.table.log2_size);
        let weights = hash::interp_weights(&self.mlp(&slots.weights, params), &stt, &nb)?;
        let feats = hash::lookup(&slot_ids, &self.table(&slots.table, params));
        let v = hash::interpolate(weights.output(), &feats, self.config.feat_dim)?;
        Ok(LevelTape {
            texture,
            stt,
            lower: nb.lower,
            upper: nb.upper,
            slots: slot_ids,
            weights,
            feats,
            v,
        })
    }

    /// Earliest pipeline stage reading flat parameter `index`.
    pub fn stage_of(&self, index: usize) -> Option<Stage> {
        for (li, l) in self.levels.iter().enumerate() {
            if l.texture.range().contains(&index) {
                return Some(Stage::Texture(li));
            }
            if l.weights.range().contains(&index) {
                return Some(Stage::Weights(li));
            }
            if l.table.range().contains(&index) {
                return Some(Stage::Table(li));
            }
            if l.attention.as_ref().is_some_and(|a| a.range().contains(&index)) {
                return Some(Stage::Gates);
            }
        }
        self.color.range().contains(&index).then_some(Stage::Color)
    }

    /// Reverse pass for one pixel, accumulating into `grad`.
    pub fn backward_pixel(&self, params: &[f64], tape: &PixelTape, d_rgb: [f64; 3], grad: &mut Gradient) -> Result<()> {
        let fd = self.config.feat_dim;
        let n = self.levels.len();
        let d = self.config.stt_dim();

        let d_hr = self
            .mlp(&self.color, params)
            .backward_into(&tape.color, &d_rgb, &mut grad.mlp[self.color.range()])?;
        let mut d_refined: Vec<Vec<f64>> = d_hr.chunks(fd).map(<[f64]>::to_vec).collect();
        let mut d_v: Vec<Vec<f64>> = vec![vec![0.0; fd]; n];

        if self.config.attention {
            for l in 0..n - 1 {
                let slot = self.levels[l].attention.as_ref().expect("gate network");
                let cache = tape.gates[l].as_ref().expect("gate cache");
                let gate = cache.output();
                let mut d_gate = vec![0.0; fd];
                for k in 0..fd {
                    d_v[l][k] += gate[k] * d_refined[l][k];
                    d_gate[k] = tape.levels[l].v[k] * d_refined[l][k];
                }
                let d_src = self
                    .mlp(slot, params)
                    .backward_into(cache, &d_gate, &mut grad.mlp[slot.range()])?;
                let target = if self.config.raw_coarse_attention {
                    &mut d_v[l + 1]
                } else {
                    &mut d_refined[l + 1]
                };
                for (t, s) in target.iter_mut().zip(&d_src) {
                    *t += s;
                }
            }
            for k in 0..fd {
                d_v[n - 1][k] += d_refined[n - 1][k];
            }
        } else {
            d_v = d_refined;
        }

        for ((slots, lt), dv) in self.levels.iter().zip(&tape.levels).zip(&d_v) {
            let (d_w, d_feats) = hash::interpolate_backward(lt.weights.output(), &lt.feats, fd, dv);
            let base = slots.table.offset;
            for (nv, &s) in lt.slots.iter().enumerate() {
                for k in 0..fd {
                    let g = d_feats[nv * fd + k];
                    if g != 0.0 {
                        grad.table.push((base + s * fd + k, g));
                    }
                }
            }
            let d_in = self
                .mlp(&slots.weights, params)
                .backward_into(&lt.weights, &d_w, &mut grad.mlp[slots.weights.range()])?;
            let d_stt = hash::weight_net_input_backward(&d_in, d);
            self.mlp(&slots.texture, params)
                .backward_params_into(&lt.texture, &d_stt[3..], &mut grad.mlp[slots.texture.range()])?;
        }
        Ok(())
    }

    fn chunk_pass(
        &self,
        params: &[f64],
        clips: &[&FrameSequence],
        chunk: &[Sample],
        loss: &LossKind,
        inv_n: f64,
        with_grad: bool,
    ) -> Result<(f64, f64, Option<Gradient>)> {
        let mut grad = with_grad.then(|| Gradient::zeros(self));
        let mut loss_sum = 0.0;
        let mut err_sum = 0.0;
        for s in chunk {
            let frames = clips
                .get(s.clip)
                .ok_or_else(|| Error::InvalidArgument(format!("sample refers to missing clip {}", s.clip)))?;
            let tape = self.forward_pixel(params, frames, s.coord)?;
            let rgb = tape.rgb();
            let err = pixel_error(&rgb, &s.target);
            let (term, d_err) = loss.pixel_term(err);
            loss_sum += term;
            err_sum += err;
            if let Some(g) = grad.as_mut() {
                self.backward_pixel(params, &tape, pixel_grad(&rgb, &s.target, d_err, inv_n), g)?;
            }
        }
        Ok((loss_sum, err_sum, grad))
    }

    /// Loss, MSE and gradient over a batch, reduced in a fixed order.
    pub fn batch_gradient(
        &self,
        params: &[f64],
        clips: &[&FrameSequence],
        samples: &[Sample],
        loss: &LossKind,
    ) -> Result<BatchOutput> {
        self.check_params(params)?;
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let inv_n = 1.0 / samples.len() as f64;
        let parts: Vec<_> = samples
            .par_chunks(GRAD_CHUNK)
            .map(|c| self.chunk_pass(params, clips, c, loss, inv_n, true))
            .collect::<Result<_>>()?;
        let mut grad = Gradient::zeros(self);
        let mut loss_sum = 0.0;
        let mut err_sum = 0.0;
        for (l, e, g) in parts {
            loss_sum += l;
            err_sum += e;
            let g = g.expect("gradient requested");
            for (a, b) in grad.mlp.iter_mut().zip(&g.mlp) {
                *a += b;
            }
            grad.table.extend(g.table);
        }
        Ok(BatchOutput {
            loss: loss_sum * inv_n,
            mse: err_sum * inv_n,
            grad,
        })
    }

    /// Batch loss and MSE without the reverse pass, reduced like
    /// [`Architecture::batch_gradient`].
    pub fn batch_loss(
        &self,
        params: &[f64],
        clips: &[&FrameSequence],
        samples: &[Sample],
        loss: &LossKind,
    ) -> Result<(f64, f64)> {
        self.check_params(params)?;
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let inv_n = 1.0 / samples.len() as f64;
        let parts: Vec<_> = samples
            .par_chunks(GRAD_CHUNK)
            .map(|c| self.chunk_pass(params, clips, c, loss, inv_n, false))
            .collect::<Result<_>>()?;
        let (l, e) = parts.iter().fold((0.0, 0.0), |(l, e), p| (l + p.0, e + p.1));
        Ok((l * inv_n, e * inv_n))
    }

    /// Appends every branch-selecting quantity of one pixel: hidden
    /// pre-activations and lattice positions of the STT codes.
    pub fn collect_kinks(&self, tape: &PixelTape, out: &mut KinkState) {
        for (slots, lt) in self.levels.iter().zip(&tape.levels) {
            out.zero.extend_from_slice(&lt.texture.hidden_pre);
            out.zero.extend_from_slice(&lt.weights.hidden_pre);
            let top = (slots.config.grid_resolution - 1) as f64;
            out.lattice.extend(lt.stt.iter().map(|c| (c + 1.0) * 0.5 * top));
        }
        for g in tape.gates.iter().flatten() {
            out.zero.extend_from_slice(&g.hidden_pre);
        }
        out.zero.extend_from_slice(&tape.color.hidden_pre);
    }
}

/// An architecture together with its parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub params: Vec<f64>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::new(config)?;
        let params = arch.init_params(seed);
        Ok(Self { arch, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        let arch = Architecture::new(config)?;
        arch.check_params(&params)?;
        Ok(Self { arch, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn forward_pixel(&self, frames: &FrameSequence, coord: [f64; 3]) -> Result<[f64; 3]> {
        Ok(self.arch.forward_pixel(&self.params, frames, coord)?.rgb())
    }

    pub fn encode_texture(&self, level: usize, patch: &[f64]) -> Result<TextureCode> {
        self.arch.encode_texture(&self.params, level, patch)
    }

    /// Zeroes every hash table.
    pub fn zero_tables(&mut self) {
        for l in &self.arch.levels {
            self.params[l.table.range()].fill(0.0);
        }
    }

    pub fn param_slice(&self, name: &str) -> Option<&[f64]> {
        self.arch.layout.get(name).map(|e| &self.params[e.range()])
    }
}
