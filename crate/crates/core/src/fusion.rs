//! Top-down gating across levels, concatenation, and colour decoding.

use crate::error::{Error, Result};
use crate::nn::{Mlp2, Mlp2Cache};

/// Per-level features, index 0 is the finest level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelFeatures(pub Vec<Vec<f64>>);

/// Sigmoid gates for a finer level computed from the next-coarser feature.
pub fn attention_weights(net: &Mlp2<'_>, v_coarser: &[f64]) -> Result<Mlp2Cache> {
    net.forward(v_coarser)
}

/// Element-wise gate `w_att * v`.
pub fn refine(v: &[f64], gate: &[f64]) -> Result<Vec<f64>> {
    if v.len() != gate.len() {
        return Err(Error::ShapeMismatch(format!(
            "feature of length {} against gate of length {}",
            v.len(),
            gate.len()
        )));
    }
    Ok(v.iter().zip(gate).map(|(a, b)| a * b).collect())
}

/// Concatenation in level order, finest first.
pub fn fuse(levels: &LevelFeatures) -> Vec<f64> {
    levels.0.iter().flatten().copied().collect()
}

/// `rgb = sigmoid(G_color(v_hr))`.
pub fn decode_color(net: &Mlp2<'_>, v_hr: &[f64]) -> Result<Mlp2Cache> {
    net.forward(v_hr)
}
