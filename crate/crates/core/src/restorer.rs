//! Inference at arbitrary output sizes, with optional input noise.

use rayon::prelude::*;

use crate::error::Result;
use crate::model::Model;
use crate::video::{make_coord_grid, resize_sequence, scaled_dim, Frame, FrameSequence, NoiseSpec};

/// Restores `lr` to `round(H * scale) x round(W * scale)`.
pub fn restore(model: &Model, lr: &FrameSequence, scale: f64) -> Result<FrameSequence> {
    let h = scaled_dim(lr.height(), scale)?;
    let w = scaled_dim(lr.width(), scale)?;
    restore_to(model, lr, h, w)
}

/// Restores `lr` onto an explicit `out_h x out_w` grid.
pub fn restore_to(model: &Model, lr: &FrameSequence, out_h: usize, out_w: usize) -> Result<FrameSequence> {
    let up = resize_sequence(lr, out_h, out_w)?;
    let grid = make_coord_grid(up.len(), out_h, out_w)?;
    let plane = out_h * out_w;
    let rgb: Vec<[f64; 3]> = grid
        .coords
        .par_iter()
        .map(|&c| model.forward_pixel(&up, c))
        .collect::<Result<_>>()?;
    let frames = rgb
        .chunks(plane)
        .map(|px| Frame::new(out_h, out_w, px.iter().flat_map(|p| p.map(|v| v.clamp(0.0, 1.0))).collect()))
        .collect::<Result<Vec<_>>>()?;
    let mut out = FrameSequence::new(frames)?;
    out.frame_rate = lr.frame_rate;
    Ok(out)
}

/// Corrupts the clean LR input with `noise`, then restores it unchanged.
/// Returns `(noisy_input, output)`.
pub fn restore_noisy(
    model: &Model,
    lr_clean: &FrameSequence,
    noise: &NoiseSpec,
    seed: u64,
    scale: f64,
) -> Result<(FrameSequence, FrameSequence)> {
    let noisy = noise.apply(lr_clean, seed)?;
    let out = restore(model, &noisy, scale)?;
    Ok((noisy, out))
}

/// Bicubic upsampling of `lr` to the same grid [`restore`] would produce.
pub fn bicubic_baseline(lr: &FrameSequence, scale: f64) -> Result<FrameSequence> {
    resize_sequence(lr, scaled_dim(lr.height(), scale)?, scaled_dim(lr.width(), scale)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::stt::LevelConfig;
    use crate::video::synthetic_video;

    fn model() -> Model {
        let cfg = ModelConfig {
            levels: vec![
                LevelConfig {
                    patch_size: 3,
                    grid_resolution: 8,
                },
                LevelConfig {
                    patch_size: 5,
                    grid_resolution: 4,
                },
            ],
            table_log2_size: 8,
            hidden: 8,
            ..ModelConfig::default()
        };
        Model::new(cfg, 4).unwrap()
    }

    #[test]
    fn output_dims_follow_rounding() {
        let m = model();
        let lr = synthetic_video(2, 5, 7, 0);
        for (s, h, w) in [(2.0, 10, 14), (2.7, 14, 19), (0.5, 3, 4), (1.0, 5, 7)] {
            let out = restore(&m, &lr, s).unwrap();
            assert_eq!(out.dims(), (2, h, w), "scale {s}");
            assert!(out.frames.iter().all(|f| f.data.iter().all(|v| (0.0..=1.0).contains(v))));
        }
        assert!(restore(&m, &lr, 0.01).is_err());
    }

    #[test]
    fn zero_tables_give_constant_output() {
        let mut m = model();
        m.zero_tables();
        let lr = synthetic_video(2, 4, 4, 1);
        for s in [1.5, 3.0] {
            let out = restore(&m, &lr, s).unwrap();
            let first = out.frames[0].pixel(0, 0);
            for f in &out.frames {
                for r in 0..f.height {
                    for c in 0..f.width {
                        assert_eq!(f.pixel(r, c), first);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_sigma_matches_clean_restore() {
        let m = model();
        let lr = synthetic_video(1, 4, 4, 2);
        let (noisy, out) = restore_noisy(&m, &lr, &NoiseSpec::Gaussian { sigma: 0.0 }, 7, 2.0).unwrap();
        assert_eq!(noisy, lr);
        assert_eq!(out, restore(&m, &lr, 2.0).unwrap());
    }

    #[test]
    fn restore_is_deterministic() {
        let m = model();
        let lr = synthetic_video(2, 4, 4, 3);
        assert_eq!(restore(&m, &lr, 2.5).unwrap(), restore(&m, &lr, 2.5).unwrap());
    }
}
