//! Pixel-error amplified loss.
//!
//! Per-pixel error is the channel mean of squared differences. Pixels at or
//! below `tau` are masked out of the reconstruction term; pixels strictly
//! below `epsilon` get a constant `delta` added in the boost term. Masks and
//! indicators are constants for differentiation.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeaConfig {
    pub tau: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
}

impl Default for PeaConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            epsilon: 0.005,
            delta: 0.001,
            alpha: 5.0,
        }
    }
}

impl PeaConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau", self.tau),
            ("epsilon", self.epsilon),
            ("delta", self.delta),
            ("alpha", self.alpha),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidArgument(format!("pea.{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-pixel squared errors.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelErrorMap(pub Vec<f64>);

impl PixelErrorMap {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[inline]
pub fn pixel_error(pred: &[f64; 3], gt: &[f64; 3]) -> f64 {
    ((pred[0] - gt[0]).powi(2) + (pred[1] - gt[1]).powi(2) + (pred[2] - gt[2]).powi(2)) / 3.0
}

pub fn pixel_loss(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<PixelErrorMap> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} predicted pixels vs {} targets", pred.len(), gt.len())));
    }
    Ok(PixelErrorMap(pred.iter().zip(gt).map(|(p, g)| pixel_error(p, g)).collect()))
}

pub fn recon_mask(errs: &PixelErrorMap, tau: f64) -> Vec<bool> {
    errs.0.iter().map(|&e| e > tau).collect()
}

/// Mean over all pixels of `err * mask`.
pub fn masked_loss(errs: &PixelErrorMap, mask: &[bool]) -> Result<f64> {
    if errs.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!("{} errors vs {} mask entries", errs.len(), mask.len())));
    }
    if errs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = errs.0.iter().zip(mask).map(|(&e, &m)| if m { e } else { 0.0 }).sum();
    Ok(sum / errs.len() as f64)
}

/// Mean over pixels of `err + delta * [err < epsilon]`.
pub fn boost_loss(errs: &PixelErrorMap, epsilon: f64, delta: f64) -> f64 {
    if errs.is_empty() {
        return 0.0;
    }
    let n = errs.len() as f64;
    let below = errs.0.iter().filter(|&&e| e < epsilon).count() as f64;
    errs.0.iter().sum::<f64>() / n + delta * (below / n)
}

pub fn pea_total(errs: &PixelErrorMap, cfg: &PeaConfig) -> f64 {
    let mask = recon_mask(errs, cfg.tau);
    masked_loss(errs, &mask).expect("mask built from the same map") + cfg.alpha * boost_loss(errs, cfg.epsilon, cfg.delta)
}

/// Training objective: PEA or plain per-pixel MSE (ablation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Pea(PeaConfig),
    Mse,
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Pea(PeaConfig::default())
    }
}

impl LossKind {
    /// One pixel's contribution `c` to `N * loss` and `dc / d err`.
    #[inline]
    pub fn pixel_term(&self, err: f64) -> (f64, f64) {
        match self {
            LossKind::Mse => (err, 1.0),
            LossKind::Pea(cfg) => {
                let mask = if err > cfg.tau { 1.0 } else { 0.0 };
                let boost = if err < cfg.epsilon { cfg.delta } else { 0.0 };
                (mask * err + cfg.alpha * (err + boost), mask + cfg.alpha)
            }
        }
    }

    pub fn total(&self, errs: &PixelErrorMap) -> f64 {
        match self {
            LossKind::Mse => errs.0.iter().sum::<f64>() / errs.len().max(1) as f64,
            LossKind::Pea(cfg) => pea_total(errs, cfg),
        }
    }

    /// Quantities whose sign selects the mask and indicator branches.
    pub fn kinks(&self, err: f64) -> Option<[f64; 2]> {
        match self {
            LossKind::Mse => None,
            LossKind::Pea(cfg) => Some([err - cfg.tau, err - cfg.epsilon]),
        }
    }
}

/// Gradient of a pixel term with respect to the predicted colour, given
/// `dc/derr` and the normaliser `1 / N`.
#[inline]
pub fn pixel_grad(pred: &[f64; 3], gt: &[f64; 3], d_err: f64, inv_n: f64) -> [f64; 3] {
    let s = d_err * inv_n * 2.0 / 3.0;
    [s * (pred[0] - gt[0]), s * (pred[1] - gt[1]), s * (pred[2] - gt[2])]
}
