//! Spatial-temporal-texture codes: local patches from the upsampled frame,
//! squashed texture codes, and the `[x, y, t, xi...]` concatenation.

use crate::error::{Error, Result};
use crate::nn::{Mlp2, Mlp2Cache};
use crate::video::{nearest_index, Frame};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelConfig {
    /// Odd side length of the square patch on the target-resolution grid.
    pub patch_size: usize,
    /// Lattice vertices per dimension used to quantise the STT code.
    pub grid_resolution: usize,
}

/// `F` components, each strictly inside (-1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct TextureCode(pub Vec<f64>);

/// `[x, y, t, xi_1, ..., xi_F]`, each component in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SttCode(pub Vec<f64>);

impl SttCode {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Gathers a `size x size x 3` patch centred on `(row, col)` with edge
/// clamping, flattened row-major with interleaved channels.
pub fn extract_patch_at(frame: &Frame, row: usize, col: usize, size: usize) -> Vec<f64> {
    let half = (size / 2) as isize;
    let mut out = Vec::with_capacity(size * size * 3);
    let w = frame.width as isize;
    let h = frame.height as isize;
    for dy in -half..=half {
        let r = (row as isize + dy).clamp(0, h - 1) as usize;
        let base = r * frame.width;
        for dx in -half..=half {
            let c = (col as isize + dx).clamp(0, w - 1) as usize;
            let i = 3 * (base + c);
            out.extend_from_slice(&frame.data[i..i + 3]);
        }
    }
    out
}

/// Patch around the pixel nearest to the normalised coordinate `(x, y)`.
pub fn extract_patch(frame: &Frame, coord: [f64; 2], patch_size: usize) -> Result<Vec<f64>> {
    if patch_size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("patch size must be odd, got {patch_size}")));
    }
    if patch_size > 2 * frame.height.max(frame.width) {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch_size} exceeds twice the frame extent {}x{}",
            frame.height, frame.width
        )));
    }
    if coord.iter().any(|c| !(-1.0..=1.0).contains(c)) {
        return Err(Error::InvalidArgument(format!("patch centre {coord:?} outside [-1, 1]^2")));
    }
    let col = nearest_index(coord[0], frame.width);
    let row = nearest_index(coord[1], frame.height);
    Ok(extract_patch_at(frame, row, col, patch_size))
}

/// `xi = tanh(G_T(patch))`. The network must carry a tanh output.
pub fn encode_texture(net: &Mlp2<'_>, patch: &[f64]) -> Result<(TextureCode, Mlp2Cache)> {
    let cache = net.forward(patch)?;
    Ok((TextureCode(cache.output.clone()), cache))
}

const RANGE_TOLERANCE: f64 = 1e-9;

pub fn assemble_stt(coord: [f64; 3], texture: &TextureCode) -> Result<SttCode> {
    let mut code = Vec::with_capacity(3 + texture.0.len());
    code.extend_from_slice(&coord);
    code.extend_from_slice(&texture.0);
    if let Some(i) = code.iter().position(|v| !(v.abs() <= 1.0 + RANGE_TOLERANCE)) {
        return Err(Error::InvalidArgument(format!(
            "STT component {i} = {} outside [-1, 1]",
            code[i]
        )));
    }
    Ok(SttCode(code))
}
