//! Frame sequences, PNG directories, Catmull-Rom resampling, coordinate
//! grids and the synthetic degradations used to build training pairs.

use std::path::{Path, PathBuf};

use image::{ColorType, ImageReader, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};

/// One RGB frame, row-major, channels interleaved, values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("frame dims must be positive, got {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "frame {height}x{width}x3 needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * 3],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Pixel lookup with coordinates clamped to the frame.
    #[inline]
    pub fn pixel_clamped(&self, row: isize, col: isize) -> [f64; 3] {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.pixel(r, c)
    }

    pub fn clamp_unit(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
    pub frame_rate: Option<f64>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("a frame sequence needs at least one frame".into()))?;
        let (h, w) = (first.height, first.width);
        if let Some(i) = frames.iter().position(|f| f.height != h || f.width != w) {
            return Err(Error::ShapeMismatch(format!(
                "frame {i} is {}x{}, expected {h}x{w}",
                frames[i].height, frames[i].width
            )));
        }
        Ok(Self {
            frames,
            frame_rate: None,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    /// `(T, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.len(), self.height(), self.width())
    }

    pub fn map_frames(&self, f: impl Fn(&Frame) -> Result<Frame>) -> Result<Self> {
        let frames = self.frames.iter().map(f).collect::<Result<Vec<_>>>()?;
        let mut out = Self::new(frames)?;
        out.frame_rate = self.frame_rate;
        Ok(out)
    }
}

fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.png")
}

fn parse_frame_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Frame files `frame_NNNNN.png` in a directory, sorted by index.
pub fn list_frame_files(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::Frame {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })? {
        let entry = entry?;
        let name = entry.file_name();
        if let Some(idx) = name.to_str().and_then(parse_frame_index) {
            files.push((idx, entry.path()));
        }
    }
    files.sort();
    Ok(files)
}

pub fn load_frames(dir: impl AsRef<Path>) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let files = list_frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::Frame {
            path: dir.to_path_buf(),
            message: "no frame_NNNNN.png files found".into(),
        });
    }
    let first_index = files[0].0;
    let mut frames = Vec::with_capacity(files.len());
    for (k, (idx, path)) in files.iter().enumerate() {
        if *idx != first_index + k {
            return Err(Error::Frame {
                path: dir.join(frame_file_name(first_index + k)),
                message: "missing frame in sequence".into(),
            });
        }
        let frame_err = |message: String| Error::Frame {
            path: path.clone(),
            message,
        };
        let img = ImageReader::open(path)
            .map_err(|e| frame_err(e.to_string()))?
            .decode()
            .map_err(|e| frame_err(e.to_string()))?;
        if img.color() != ColorType::Rgb8 {
            return Err(frame_err(format!("expected 8-bit RGB, found {:?}", img.color())));
        }
        let rgb = img.into_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        if let Some(prev) = frames.first() {
            let prev: &Frame = prev;
            if prev.height != h || prev.width != w {
                return Err(frame_err(format!("is {h}x{w}, expected {}x{}", prev.height, prev.width)));
            }
        }
        let data = rgb.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
        frames.push(Frame::new(h, w, data)?);
    }
    FrameSequence::new(frames)
}

/// Clamp to [0, 1] and quantise with round-half-up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn save_frames(seq: &FrameSequence, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::Frame {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    for (i, frame) in seq.frames.iter().enumerate() {
        let path = dir.join(frame_file_name(i));
        let bytes: Vec<u8> = frame.data.iter().map(|&v| quantize(v)).collect();
        let img = RgbImage::from_raw(frame.width as u32, frame.height as u32, bytes)
            .expect("buffer length matches frame dims");
        img.save(&path).map_err(|e| Error::Frame {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}

/// Catmull-Rom cubic convolution kernel (a = -0.5).
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Four taps per output sample: clamped source indices and kernel weights.
/// The first index is the reference tap (nearest source sample at or below
/// the mapped position).
struct Taps {
    reference: usize,
    index: [usize; 4],
    weight: [f64; 4],
}

fn taps(out_len: usize, in_len: usize) -> Vec<Taps> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|j| {
            let src = (j as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let frac = src - base;
            let base = base as isize;
            let clamp = |i: isize| i.clamp(0, in_len as isize - 1) as usize;
            Taps {
                reference: clamp(base),
                index: [clamp(base - 1), clamp(base), clamp(base + 1), clamp(base + 2)],
                weight: [
                    cubic_kernel(frac + 1.0),
                    cubic_kernel(frac),
                    cubic_kernel(1.0 - frac),
                    cubic_kernel(2.0 - frac),
                ],
            }
        })
        .collect()
}

/// Separable bicubic resampling with pixel-centre alignment and edge clamping.
/// The output is clamped to [0, 1].
pub fn bicubic_resize(frame: &Frame, out_h: usize, out_w: usize) -> Result<Frame> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!("output dims must be positive, got {out_h}x{out_w}")));
    }
    let (in_h, in_w) = (frame.height, frame.width);
    let col_taps = taps(out_w, in_w);
    let row_taps = taps(out_h, in_h);

    // Weighted sums are taken relative to the reference tap so that constant
    // signals and integer-aligned samples come through bit-exact.
    let mut horiz = vec![0.0; in_h * out_w * 3];
    for r in 0..in_h {
        let row = &frame.data[r * in_w * 3..(r + 1) * in_w * 3];
        for (j, t) in col_taps.iter().enumerate() {
            for ch in 0..3 {
                let reference = row[3 * t.reference + ch];
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += t.weight[k] * (row[3 * t.index[k] + ch] - reference);
                }
                horiz[3 * (r * out_w + j) + ch] = reference + acc;
            }
        }
    }

    let mut out = vec![0.0; out_h * out_w * 3];
    for (i, t) in row_taps.iter().enumerate() {
        for j in 0..out_w {
            for ch in 0..3 {
                let at = |r: usize| horiz[3 * (r * out_w + j) + ch];
                let reference = at(t.reference);
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += t.weight[k] * (at(t.index[k]) - reference);
                }
                out[3 * (i * out_w + j) + ch] = (reference + acc).clamp(0.0, 1.0);
            }
        }
    }
    Frame::new(out_h, out_w, out)
}

pub fn resize_sequence(seq: &FrameSequence, out_h: usize, out_w: usize) -> Result<FrameSequence> {
    seq.map_frames(|f| bicubic_resize(f, out_h, out_w))
}

/// Target dimension `round(n * scale)`, rejecting degenerate results.
pub fn scaled_dim(n: usize, scale: f64) -> Result<usize> {
    let d = (n as f64 * scale).round();
    if !d.is_finite() || d < 1.0 {
        return Err(Error::InvalidArgument(format!("scale {scale} maps dimension {n} to {d}")));
    }
    Ok(d as usize)
}

/// Bicubic downsampling by `scale > 1` to `round(H / scale) x round(W / scale)`.
pub fn degrade_downsample(hr: &FrameSequence, scale: f64) -> Result<FrameSequence> {
    if !(scale > 1.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("downsampling scale must be > 1, got {scale}")));
    }
    let out_h = ((hr.height() as f64 / scale).round() as usize).max(1);
    let out_w = ((hr.width() as f64 / scale).round() as usize).max(1);
    resize_sequence(hr, out_h, out_w)
}

/// Per-frame generator: stream `frame` of the ChaCha generator keyed by `seed`.
fn frame_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64);
    rng
}

/// Additive white Gaussian noise with standard deviation `sigma / 255`.
pub fn add_gaussian_noise(seq: &FrameSequence, sigma: f64, seed: u64) -> Result<FrameSequence> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(seq.clone());
    }
    let normal = Normal::new(0.0, sigma / 255.0).expect("finite positive std");
    let mut out = seq.clone();
    for (t, frame) in out.frames.iter_mut().enumerate() {
        let mut rng = frame_rng(seed, t);
        for v in frame.data.iter_mut() {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Shot noise: each value becomes `Poisson(v * level) / level`.
pub fn add_poisson_noise(seq: &FrameSequence, level: f64, seed: u64) -> Result<FrameSequence> {
    if !(level > 0.0) || !level.is_finite() {
        return Err(Error::InvalidArgument(format!("poisson level must be > 0, got {level}")));
    }
    let mut out = seq.clone();
    for (t, frame) in out.frames.iter_mut().enumerate() {
        let mut rng = frame_rng(seed, t);
        for v in frame.data.iter_mut() {
            let lambda = v.max(0.0) * level;
            *v = if lambda > 0.0 {
                let count: f64 = Poisson::new(lambda).expect("positive rate").sample(&mut rng);
                (count / level).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    Gaussian { sigma: f64 },
    Poisson { level: f64 },
}

impl NoiseSpec {
    pub fn apply(&self, seq: &FrameSequence, seed: u64) -> Result<FrameSequence> {
        match *self {
            NoiseSpec::Gaussian { sigma } => add_gaussian_noise(seq, sigma, seed),
            NoiseSpec::Poisson { level } => add_poisson_noise(seq, level, seed),
        }
    }
}

/// Pixel-centre normalisation of index `i` out of `n` onto [-1, 1].
/// A single sample maps to 0.
#[inline]
pub fn normalized_coord(i: usize, n: usize) -> f64 {
    2.0 * (i as f64 + 0.5) / n as f64 - 1.0
}

/// Nearest pixel index for a normalised coordinate.
#[inline]
pub fn nearest_index(c: f64, n: usize) -> usize {
    let pos = (c + 1.0) * 0.5 * n as f64 - 0.5;
    (pos.round().max(0.0) as usize).min(n - 1)
}

/// Dense pixel-centre grid, ordered frame-major then row then column.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub coords: Vec<[f64; 3]>,
}

impl CoordGrid {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// `(t, row, col)` of a flat grid index.
    pub fn position(&self, index: usize) -> (usize, usize, usize) {
        let plane = self.height * self.width;
        (index / plane, (index % plane) / self.width, index % self.width)
    }
}

/// Coordinates are `[x, y, t]` with x from columns, y from rows, t from frames.
pub fn make_coord_grid(frames: usize, height: usize, width: usize) -> Result<CoordGrid> {
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "grid dims must be positive, got {frames}x{height}x{width}"
        )));
    }
    let mut coords = Vec::with_capacity(frames * height * width);
    for t in 0..frames {
        let tc = normalized_coord(t, frames);
        for r in 0..height {
            let y = normalized_coord(r, height);
            for c in 0..width {
                coords.push([normalized_coord(c, width), y, tc]);
            }
        }
    }
    Ok(CoordGrid {
        frames,
        height,
        width,
        coords,
    })
}

/// Deterministic smooth synthetic video used by examples and tests: moving
/// gratings and a drifting disc.
pub fn synthetic_video(frames: usize, height: usize, width: usize, seed: u64) -> FrameSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let freq: [f64; 2] = [rng.random_range(2.0..4.0), rng.random_range(2.0..4.0)];
    let list = (0..frames)
        .map(|t| {
            let tt = t as f64 / frames.max(1) as f64;
            let (cx, cy) = (0.3 + 0.4 * tt, 0.6 - 0.2 * tt);
            Frame::from_fn(height, width, |r, c| {
                let x = (c as f64 + 0.5) / width as f64;
                let y = (r as f64 + 0.5) / height as f64;
                let g1 = (std::f64::consts::TAU * (freq[0] * x + 0.5 * tt) + phase[0]).sin();
                let g2 = (std::f64::consts::TAU * (freq[1] * y - 0.3 * tt) + phase[1]).sin();
                let g3 = (std::f64::consts::TAU * (freq[0] * (x + y)) + phase[2]).cos();
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                let disc = if d2 < 0.04 { 0.35 } else { 0.0 };
                [
                    (0.5 + 0.25 * g1 + 0.1 * g3 + disc).clamp(0.0, 1.0),
                    (0.5 + 0.25 * g2 - 0.1 * g3).clamp(0.0, 1.0),
                    (0.45 + 0.15 * g1 * g2 + 0.6 * disc).clamp(0.0, 1.0),
                ]
            })
        })
        .collect();
    FrameSequence::new(list).expect("uniform synthetic frames")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Frame {
        Frame::from_fn(h, w, |r, c| {
            let v = (r * w + c) as f64 / (h * w) as f64;
            [v, 1.0 - v, 0.5 * v]
        })
    }

    /// Direct 2-D kernel sum, independent of the separable implementation.
    fn bicubic_oracle(f: &Frame, out_h: usize, out_w: usize) -> Frame {
        let sy = f.height as f64 / out_h as f64;
        let sx = f.width as f64 / out_w as f64;
        Frame::from_fn(out_h, out_w, |i, j| {
            let py = (i as f64 + 0.5) * sy - 0.5;
            let px = (j as f64 + 0.5) * sx - 0.5;
            let mut acc = [0.0; 3];
            for r in (py.floor() as isize - 1)..=(py.floor() as isize + 2) {
                for c in (px.floor() as isize - 1)..=(px.floor() as isize + 2) {
                    let w = cubic_kernel(py - r as f64) * cubic_kernel(px - c as f64);
                    let p = f.pixel_clamped(r, c);
                    for ch in 0..3 {
                        acc[ch] += w * p[ch];
                    }
                }
            }
            acc.map(|v| v.clamp(0.0, 1.0))
        })
    }

    #[test]
    fn kernel_is_interpolating() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
        for k in 0..10 {
            let f = k as f64 / 10.0;
            let s = cubic_kernel(f + 1.0) + cubic_kernel(f) + cubic_kernel(1.0 - f) + cubic_kernel(2.0 - f);
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_frame_stays_constant() {
        let f = Frame::filled(7, 5, 0.37);
        for (h, w) in [(14, 10), (3, 2), (7, 5), (19, 13)] {
            let out = bicubic_resize(&f, h, w).unwrap();
            assert!(out.data.iter().all(|&v| v == 0.37), "{h}x{w}");
        }
    }

    #[test]
    fn unit_scale_is_identity() {
        let f = ramp(6, 9);
        let out = bicubic_resize(&f, 6, 9).unwrap();
        for (a, b) in out.data.iter().zip(&f.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn checkerboard_upscale_matches_oracle() {
        let f = Frame::from_fn(2, 2, |r, c| {
            let v = if (r + c) % 2 == 0 { 1.0 } else { 0.0 };
            [v, 1.0 - v, 0.25]
        });
        let got = bicubic_resize(&f, 4, 4).unwrap();
        let want = bicubic_oracle(&f, 4, 4);
        for (a, b) in got.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn arbitrary_resizes_match_oracle() {
        let f = Frame::from_fn(9, 7, |r, c| {
            let v = ((r * 31 + c * 17) % 11) as f64 / 10.0;
            [v, (v * 3.0) % 1.0, 1.0 - v]
        });
        for (h, w) in [(4, 3), (20, 15), (13, 2), (1, 1)] {
            let got = bicubic_resize(&f, h, w).unwrap();
            let want = bicubic_oracle(&f, h, w);
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-10, "{h}x{w}");
            }
        }
    }

    #[test]
    fn downsample_dims() {
        let hr = FrameSequence::new(vec![Frame::filled(256, 256, 0.2)]).unwrap();
        let lr = degrade_downsample(&hr, 4.0).unwrap();
        assert_eq!(lr.dims(), (1, 64, 64));
        assert!(lr.frames[0].data.iter().all(|&v| v == 0.2));
        let odd = FrameSequence::new(vec![Frame::filled(10, 7, 0.0)]).unwrap();
        assert_eq!(degrade_downsample(&odd, 3.0).unwrap().dims(), (1, 3, 2));
        assert!(degrade_downsample(&odd, 1.0).is_err());
        assert!(degrade_downsample(&odd, 0.5).is_err());
    }

    #[test]
    fn two_halvings_close_to_one_quartering() {
        let smooth = Frame::from_fn(64, 64, |r, c| {
            let v = (r + c) as f64 / 126.0;
            [v, 0.5 * v + 0.25, 1.0 - v]
        });
        let seq = FrameSequence::new(vec![smooth]).unwrap();
        let direct = degrade_downsample(&seq, 4.0).unwrap();
        let twice = degrade_downsample(&degrade_downsample(&seq, 2.0).unwrap(), 2.0).unwrap();
        let psnr = crate::metrics::psnr(&direct, &twice).unwrap();
        // Both paths agree to far better than the 0.5 dB budget.
        assert!(psnr > 40.0, "psnr {psnr}");
    }

    #[test]
    fn gaussian_noise_properties() {
        let seq = FrameSequence::new(vec![Frame::filled(8, 8, 0.5)]).unwrap();
        assert_eq!(add_gaussian_noise(&seq, 0.0, 3).unwrap(), seq);
        let a = add_gaussian_noise(&seq, 30.0, 3).unwrap();
        let b = add_gaussian_noise(&seq, 30.0, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, add_gaussian_noise(&seq, 30.0, 4).unwrap());
    }

    #[test]
    fn gaussian_noise_std() {
        // 333,334 pixels x 3 channels, about 10^6 samples; clamping at
        // 0.5 +- 4.25 sigma is negligible.
        let seq = FrameSequence::new(vec![Frame::filled(578, 578, 0.5)]).unwrap();
        let noisy = add_gaussian_noise(&seq, 30.0, 17).unwrap();
        let n = noisy.frames[0].data.len() as f64;
        let diffs: Vec<f64> = noisy.frames[0].data.iter().map(|v| v - 0.5).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let ratio = var.sqrt() / (30.0 / 255.0);
        assert!((0.97..=1.03).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn poisson_noise_properties() {
        let zeros = FrameSequence::new(vec![Frame::filled(16, 16, 0.0)]).unwrap();
        assert!(add_poisson_noise(&zeros, 30.0, 1).unwrap().frames[0].data.iter().all(|&v| v == 0.0));

        let half = FrameSequence::new(vec![Frame::filled(200, 200, 0.5)]).unwrap();
        let mut variances = Vec::new();
        for level in [10.0, 30.0, 50.0] {
            let noisy = add_poisson_noise(&half, level, 9).unwrap();
            let d = &noisy.frames[0].data;
            let n = d.len() as f64;
            let mean = d.iter().sum::<f64>() / n;
            if level == 30.0 {
                assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
            }
            variances.push(d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n);
        }
        assert!(variances[0] > variances[1] && variances[1] > variances[2], "{variances:?}");
        assert!(add_poisson_noise(&half, 0.0, 1).is_err());
    }

    #[test]
    fn coord_grid_layout() {
        let g = make_coord_grid(1, 1, 2).unwrap();
        assert_eq!(g.coords, vec![[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]]);
        let g = make_coord_grid(1, 1, 1).unwrap();
        assert_eq!(g.coords, vec![[0.0, 0.0, 0.0]]);
        let g = make_coord_grid(3, 4, 5).unwrap();
        assert_eq!(g.len(), 60);
        let mut seen = g.coords.clone();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seen.dedup();
        assert_eq!(seen.len(), 60);
        assert!(g.coords.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(g.position(27), (1, 1, 2));
        assert_eq!(g.coords[27], [normalized_coord(2, 5), normalized_coord(1, 4), 0.0]);
        assert!(make_coord_grid(0, 1, 1).is_err());
    }

    #[test]
    fn nearest_index_inverts_normalization() {
        for n in [1, 2, 7, 64] {
            for i in 0..n {
                assert_eq!(nearest_index(normalized_coord(i, n), n), i);
            }
        }
        assert_eq!(nearest_index(-1.0, 8), 0);
        assert_eq!(nearest_index(1.0, 8), 7);
    }

    #[test]
    fn quantize_rounds_half_up_and_clamps() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-0.001), 0);
        assert_eq!(quantize(1.2), 255);
        assert_eq!(quantize(1.0), 255);
    }
}
