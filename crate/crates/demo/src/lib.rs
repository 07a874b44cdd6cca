//! Browser bindings: degrade a picture, fit a small model to it and restore
//! at any scale, and plot the per-pixel training loss.
//!
//! Pictures cross the boundary as RGBA bytes, row-major, as produced by
//! `CanvasRenderingContext2D.getImageData`. The `*_impl` functions hold the
//! logic and return `String` errors so they can be tested natively.

use vrinr::metrics::psnr;
use vrinr::restorer;
use vrinr::stt::LevelConfig;
use vrinr::trainer::{self, TrainingClip};
use vrinr::video::{degrade_downsample, quantize, resize_sequence};
use vrinr::{Checkpoint, Frame, FrameSequence, LossKind, ModelConfig, NoiseSpec, PeaConfig, TrainConfig};
use wasm_bindgen::prelude::*;

/// Frames sent back to the page.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Picture {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl Picture {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

fn to_frame(rgba: &[u8], width: usize, height: usize) -> Result<Frame, String> {
    if width == 0 || height == 0 || rgba.len() != width * height * 4 {
        return Err(format!("expected {width}x{height} RGBA ({} bytes), got {}", width * height * 4, rgba.len()));
    }
    let data = rgba
        .chunks_exact(4)
        .flat_map(|px| px[..3].iter().map(|&b| f64::from(b) / 255.0))
        .collect();
    Frame::new(height, width, data).map_err(|e| e.to_string())
}

fn to_picture(f: &Frame) -> Picture {
    let rgba = f
        .data
        .chunks_exact(3)
        .flat_map(|px| [quantize(px[0]), quantize(px[1]), quantize(px[2]), 255])
        .collect();
    Picture {
        width: f.width,
        height: f.height,
        rgba,
    }
}

fn single(frame: Frame) -> Result<FrameSequence, String> {
    FrameSequence::new(vec![frame]).map_err(|e| e.to_string())
}

/// Bicubic downsampling by `scale`, then Gaussian noise of `sigma` (0-255).
pub fn degrade_impl(rgba: &[u8], width: usize, height: usize, scale: f64, sigma: f64, seed: u32) -> Result<Picture, String> {
    let hr = single(to_frame(rgba, width, height)?)?;
    let lr = degrade_downsample(&hr, scale).map_err(|e| e.to_string())?;
    let lr = NoiseSpec::Gaussian { sigma }
        .apply(&lr, u64::from(seed))
        .map_err(|e| e.to_string())?;
    Ok(to_picture(&lr.frames[0]))
}

#[wasm_bindgen]
pub fn degrade(rgba: &[u8], width: usize, height: usize, scale: f64, sigma: f64, seed: u32) -> Result<Picture, JsError> {
    degrade_impl(rgba, width, height, scale, sigma, seed).map_err(|e| JsError::new(&e))
}

/// `(err, pea, mse)` triples over `n` evenly spaced errors in `[0, max_err]`.
/// The PEA value is one pixel's share of the loss with everything else fixed.
pub fn loss_curve_impl(tau: f64, epsilon: f64, delta: f64, alpha: f64, max_err: f64, n: usize) -> Result<Vec<f64>, String> {
    let cfg = PeaConfig {
        tau,
        epsilon,
        delta,
        alpha,
    };
    cfg.validate().map_err(|e| e.to_string())?;
    if n < 2 || max_err.is_nan() || max_err <= 0.0 {
        return Err("need at least two samples over a positive range".into());
    }
    let loss = LossKind::Pea(cfg);
    Ok((0..n)
        .flat_map(|i| {
            let err = max_err * i as f64 / (n - 1) as f64;
            [err, loss.pixel_term(err).0, err]
        })
        .collect())
}

#[wasm_bindgen]
pub fn loss_curve(tau: f64, epsilon: f64, delta: f64, alpha: f64, max_err: f64, n: usize) -> Result<Vec<f64>, JsError> {
    loss_curve_impl(tau, epsilon, delta, alpha, max_err, n).map_err(|e| JsError::new(&e))
}

/// Model sized for a picture around 48 pixels a side in a browser tab.
pub fn demo_config(scale: f64, seed: u32) -> TrainConfig {
    TrainConfig {
        scale,
        seed: u64::from(seed),
        batch_coords: 512,
        model: ModelConfig {
            levels: vec![
                LevelConfig {
                    patch_size: 3,
                    grid_resolution: 48,
                },
                LevelConfig {
                    patch_size: 5,
                    grid_resolution: 16,
                },
            ],
            table_log2_size: 12,
            hidden: 32,
            ..ModelConfig::default()
        },
        ..TrainConfig::desk_scale()
    }
}

/// Fits a model to one picture a few epochs at a time.
#[wasm_bindgen]
pub struct Fitter {
    clip: TrainingClip,
    lr: FrameSequence,
    ckpt: Checkpoint,
    last_loss: f64,
}

impl Fitter {
    pub fn new_impl(rgba: &[u8], width: usize, height: usize, scale: f64, seed: u32) -> Result<Fitter, String> {
        let hr = single(to_frame(rgba, width, height)?)?;
        let cfg = demo_config(scale, seed);
        let clip = TrainingClip::new(hr, scale).map_err(|e| e.to_string())?;
        let lr = degrade_downsample(&clip.hr, scale).map_err(|e| e.to_string())?;
        let ckpt = Checkpoint::init(cfg).map_err(|e| e.to_string())?;
        Ok(Fitter {
            clip,
            lr,
            ckpt,
            last_loss: f64::NAN,
        })
    }

    pub fn train_impl(&mut self, epochs: usize) -> Result<f64, String> {
        let until = self.ckpt.epoch + epochs;
        let mut loss = (0.0, 0usize);
        let clips = std::slice::from_ref(&self.clip);
        let next = trainer::resume(self.ckpt.clone(), clips, until, &mut |r| {
            if r.epoch + 1 == until {
                loss.0 += r.loss;
                loss.1 += 1;
            }
        })
        .map_err(|e| e.to_string())?;
        self.ckpt = next;
        if loss.1 > 0 {
            self.last_loss = loss.0 / loss.1 as f64;
        }
        Ok(self.last_loss)
    }

    /// The model's restore of the training LR picture at `scale`.
    pub fn restore_impl(&self, scale: f64) -> Result<Picture, String> {
        let model = self.ckpt.model().map_err(|e| e.to_string())?;
        let out = restorer::restore(&model, &self.lr, scale).map_err(|e| e.to_string())?;
        Ok(to_picture(&out.frames[0]))
    }

    /// `[model, bicubic]` PSNR against the original picture.
    pub fn scores_impl(&self) -> Result<Vec<f64>, String> {
        let model = self.ckpt.model().map_err(|e| e.to_string())?;
        let (_, h, w) = self.clip.hr.dims();
        let out = restorer::restore_to(&model, &self.lr, h, w).map_err(|e| e.to_string())?;
        let bic = resize_sequence(&self.lr, h, w).map_err(|e| e.to_string())?;
        let p = |s: &FrameSequence| psnr(s, &self.clip.hr).map_err(|e| e.to_string());
        Ok(vec![p(&out)?, p(&bic)?])
    }
}

#[wasm_bindgen]
impl Fitter {
    /// Fits to the picture after downsampling it by `scale`.
    #[wasm_bindgen(constructor)]
    pub fn new(rgba: &[u8], width: usize, height: usize, scale: f64, seed: u32) -> Result<Fitter, JsError> {
        Self::new_impl(rgba, width, height, scale, seed).map_err(|e| JsError::new(&e))
    }

    /// Runs `epochs` more epochs; returns the mean loss of the last one.
    pub fn train(&mut self, epochs: usize) -> Result<f64, JsError> {
        self.train_impl(epochs).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(getter)]
    pub fn epoch(&self) -> usize {
        self.ckpt.epoch
    }

    pub fn restore(&self, scale: f64) -> Result<Picture, JsError> {
        self.restore_impl(scale).map_err(|e| JsError::new(&e))
    }

    pub fn bicubic(&self, scale: f64) -> Result<Picture, JsError> {
        restorer::bicubic_baseline(&self.lr, scale)
            .map(|s| to_picture(&s.frames[0]))
            .map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn scores(&self) -> Result<Vec<f64>, JsError> {
        self.scores_impl().map_err(|e| JsError::new(&e))
    }
}
