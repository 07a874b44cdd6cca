//! PSNR and SSIM over frame sequences.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::video::{quantize, Frame, FrameSequence};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_frames(a: &Frame, b: &Frame) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::ShapeMismatch(format!(
            "frame {}x{} against {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

fn check_sequences(a: &FrameSequence, b: &FrameSequence) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} frames against {}", a.len(), b.len())));
    }
    a.frames.iter().zip(&b.frames).try_for_each(|(x, y)| check_frames(x, y))
}

pub fn frame_mse(a: &Frame, b: &Frame) -> Result<f64> {
    check_frames(a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

/// `10 log10(1 / mse)`; identical frames give `f64::INFINITY`.
pub fn frame_psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let mse = frame_mse(a, b)?;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Mean of the finite per-frame values, or infinity if every frame matches.
pub fn mean_finite(values: &[f64]) -> f64 {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

pub fn psnr_per_frame(a: &FrameSequence, b: &FrameSequence) -> Result<Vec<f64>> {
    check_sequences(a, b)?;
    a.frames.par_iter().zip(&b.frames).map(|(x, y)| frame_psnr(x, y)).collect()
}

pub fn psnr(a: &FrameSequence, b: &FrameSequence) -> Result<f64> {
    Ok(mean_finite(&psnr_per_frame(a, b)?))
}

fn quantized(f: &Frame) -> Frame {
    Frame {
        height: f.height,
        width: f.width,
        data: f.data.iter().map(|&v| f64::from(quantize(v)) / 255.0).collect(),
    }
}

/// PSNR after rounding both inputs to 8 bits.
pub fn psnr_quantized(a: &FrameSequence, b: &FrameSequence) -> Result<f64> {
    check_sequences(a, b)?;
    let per: Vec<f64> = a
        .frames
        .par_iter()
        .zip(&b.frames)
        .map(|(x, y)| frame_psnr(&quantized(x), &quantized(y)))
        .collect::<Result<_>>()?;
    Ok(mean_finite(&per))
}

/// Normalised 1-D Gaussian taps for the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-region filter of one channel.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WINDOW).map(|i| k[i] * plane[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Channel-mean SSIM of one frame pair.
pub fn frame_ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_frames(a, b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height, a.width
        )));
    }
    if a.data == b.data {
        return Ok(1.0);
    }
    let (h, w) = (a.height, a.width);
    let k = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.data.iter().skip(ch).step_by(3).copied().collect();
        let y: Vec<f64> = b.data.iter().skip(ch).step_by(3).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, h, w, &k);
        let my = filter_valid(&y, h, w, &k);
        let sxx = filter_valid(&xx, h, w, &k);
        let syy = filter_valid(&yy, h, w, &k);
        let sxy = filter_valid(&xy, h, w, &k);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / 3.0)
}

pub fn ssim_per_frame(a: &FrameSequence, b: &FrameSequence) -> Result<Vec<f64>> {
    check_sequences(a, b)?;
    a.frames.par_iter().zip(&b.frames).map(|(x, y)| frame_ssim(x, y)).collect()
}

pub fn ssim(a: &FrameSequence, b: &FrameSequence) -> Result<f64> {
    let per = ssim_per_frame(a, b)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Frame {
        Frame::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    fn seq(f: Frame) -> FrameSequence {
        FrameSequence::new(vec![f]).unwrap()
    }

    #[test]
    fn identical_is_infinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = seq(random_frame(8, 8, &mut rng));
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn uniform_error_of_point_one() {
        let a = seq(Frame::filled(16, 16, 0.3));
        let b = seq(Frame::filled(16, 16, 0.4));
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_frame(13, 9, &mut rng);
        let b = random_frame(13, 9, &mut rng);
        let mut acc = 0.0;
        for r in 0..13 {
            for c in 0..9 {
                let (p, q) = (a.pixel(r, c), b.pixel(r, c));
                for ch in 0..3 {
                    acc += (p[ch] - q[ch]).powi(2);
                }
            }
        }
        let want = 10.0 * (1.0 / (acc / (13.0 * 9.0 * 3.0))).log10();
        assert!((frame_psnr(&a, &b).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn video_mean_skips_identical_frames() {
        let a = FrameSequence::new(vec![Frame::filled(4, 4, 0.3), Frame::filled(4, 4, 0.5)]).unwrap();
        let b = FrameSequence::new(vec![Frame::filled(4, 4, 0.4), Frame::filled(4, 4, 0.5)]).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let base = Frame::filled(8, 8, 0.5);
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1] {
            let noisy = Frame::from_fn(8, 8, |r, c| {
                let s = if (r + c) % 2 == 0 { amp } else { -amp };
                [0.5 + s; 3]
            });
            let p = frame_psnr(&base, &noisy).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn shape_mismatch_errors() {
        let a = seq(Frame::filled(4, 4, 0.3));
        let b = seq(Frame::filled(4, 5, 0.3));
        assert!(psnr(&a, &b).is_err());
        let two = FrameSequence::new(vec![Frame::filled(4, 4, 0.3); 2]).unwrap();
        assert!(psnr(&a, &two).is_err());
    }

    #[test]
    fn quantized_psnr_ignores_sub_lsb_differences() {
        let a = seq(Frame::filled(4, 4, 0.5));
        let b = seq(Frame::filled(4, 4, 0.5 + 1e-4));
        assert_eq!(psnr_quantized(&a, &b).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_self_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = seq(random_frame(16, 16, &mut rng));
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_black_white_closed_form() {
        let a = seq(Frame::filled(12, 12, 0.0));
        let b = seq(Frame::filled(12, 12, 1.0));
        let c1 = SSIM_K1 * SSIM_K1;
        let want = c1 / (1.0 + c1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn ssim_symmetric_and_small_frames_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = seq(random_frame(14, 12, &mut rng));
        let b = seq(random_frame(14, 12, &mut rng));
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
        let s = seq(Frame::filled(10, 20, 0.1));
        assert!(ssim(&s, &s).is_err());
    }

    #[test]
    fn window_sums_to_one() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(w[0], w[10]);
    }
}
