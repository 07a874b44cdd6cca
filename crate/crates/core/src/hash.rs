//! Multi-resolution hash embedding over STT space with learned
//! interpolation weights.
//!
//! An STT code of dimension `d` is quantised onto a lattice with `N` vertices
//! per dimension. The `2^d` corners of the enclosing cell are hashed into a
//! table of feature rows, and a softmax network predicts one weight per
//! corner from the code and its offsets to the cell's bounding corners.

use crate::error::{Error, Result};
use crate::nn::{Mlp2, Mlp2Cache};

/// Per-dimension multipliers for the XOR spatial hash. The first six are the
/// usual ones from hash-grid encodings; the rest extend to wider texture codes.
pub const HASH_PRIMES: [u32; 12] = [
    1,
    2_654_435_761,
    805_459_861,
    3_674_653_429,
    2_097_192_037,
    1_434_869_437,
    2_246_822_581,
    3_266_489_921,
    668_265_289,
    374_761_397,
    2_870_177_467,
    1_911_520_727,
];

pub const MAX_STT_DIM: usize = HASH_PRIMES.len();

/// Borrowed hash table: `2^log2_size` rows of `feat_dim` features.
#[derive(Debug, Clone, Copy)]
pub struct HashTable<'a> {
    pub log2_size: u32,
    pub feat_dim: usize,
    pub entries: &'a [f64],
}

impl<'a> HashTable<'a> {
    pub fn new(log2_size: u32, feat_dim: usize, entries: &'a [f64]) -> Result<Self> {
        if entries.len() != (1usize << log2_size) * feat_dim {
            return Err(Error::ShapeMismatch(format!(
                "hash table 2^{log2_size} x {feat_dim} needs {} entries, got {}",
                (1usize << log2_size) * feat_dim,
                entries.len()
            )));
        }
        Ok(Self {
            log2_size,
            feat_dim,
            entries,
        })
    }

    pub fn size(&self) -> usize {
        1 << self.log2_size
    }

    pub fn row(&self, slot: usize) -> &'a [f64] {
        &self.entries[slot * self.feat_dim..(slot + 1) * self.feat_dim]
    }
}

/// The enclosing lattice cell of one STT code.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexNeighborhood {
    pub resolution: usize,
    pub lower: Vec<u32>,
    pub upper: Vec<u32>,
    /// De-quantised position of the all-lower corner.
    pub v_min: Vec<f64>,
    /// De-quantised position of the all-upper corner.
    pub v_max: Vec<f64>,
}

impl VertexNeighborhood {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn num_vertices(&self) -> usize {
        1 << self.dim()
    }

    /// Vertex `n` in lexicographic order: bit `d-1-i` of `n` selects the
    /// upper corner along dimension `i`.
    pub fn vertex(&self, n: usize) -> Vec<u32> {
        let d = self.dim();
        (0..d)
            .map(|i| {
                if (n >> (d - 1 - i)) & 1 == 1 {
                    self.upper[i]
                } else {
                    self.lower[i]
                }
            })
            .collect()
    }

    pub fn vertices(&self) -> Vec<Vec<u32>> {
        (0..self.num_vertices()).map(|n| self.vertex(n)).collect()
    }

    /// Table slots of all vertices, in vertex order.
    pub fn slots(&self, log2_size: u32) -> Vec<usize> {
        let d = self.dim();
        let lo: Vec<u32> = (0..d).map(|i| self.lower[i].wrapping_mul(HASH_PRIMES[i])).collect();
        let hi: Vec<u32> = (0..d).map(|i| self.upper[i].wrapping_mul(HASH_PRIMES[i])).collect();
        let mask = (1u32 << log2_size).wrapping_sub(1);
        (0..self.num_vertices())
            .map(|n| {
                let mut h = 0u32;
                for i in 0..d {
                    h ^= if (n >> (d - 1 - i)) & 1 == 1 { hi[i] } else { lo[i] };
                }
                (h & mask) as usize
            })
            .collect()
    }
}

#[inline]
fn dequantize(k: u32, resolution: usize) -> f64 {
    2.0 * f64::from(k) / (resolution - 1) as f64 - 1.0
}

/// Maps each component `c` to `u = (c + 1) / 2 * (N - 1)` and takes
/// `floor(u)`, `ceil(u)` as the cell corners.
pub fn quantize_vertices(stt: &[f64], resolution: usize) -> Result<VertexNeighborhood> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!("grid resolution must be >= 2, got {resolution}")));
    }
    if stt.len() > MAX_STT_DIM {
        return Err(Error::InvalidArgument(format!(
            "STT dimension {} exceeds the supported {MAX_STT_DIM}",
            stt.len()
        )));
    }
    let top = (resolution - 1) as f64;
    let mut lower = Vec::with_capacity(stt.len());
    let mut upper = Vec::with_capacity(stt.len());
    for (i, &c) in stt.iter().enumerate() {
        if !(-1.0..=1.0).contains(&c) {
            return Err(Error::InvalidArgument(format!("STT component {i} = {c} outside [-1, 1]")));
        }
        let u = ((c + 1.0) * 0.5 * top).clamp(0.0, top);
        lower.push(u.floor() as u32);
        upper.push(u.ceil() as u32);
    }
    let v_min = lower.iter().map(|&k| dequantize(k, resolution)).collect();
    let v_max = upper.iter().map(|&k| dequantize(k, resolution)).collect();
    Ok(VertexNeighborhood {
        resolution,
        lower,
        upper,
        v_min,
        v_max,
    })
}

/// `(XOR_i vertex_i * prime_i) mod 2^log2_size` with wrapping 32-bit products.
pub fn hash_index(vertex: &[u32], log2_size: u32) -> usize {
    let mut h = 0u32;
    for (v, p) in vertex.iter().zip(HASH_PRIMES) {
        h ^= v.wrapping_mul(p);
    }
    (h & (1u32 << log2_size).wrapping_sub(1)) as usize
}

/// Gathers the feature rows of all vertices: `2^d x feat_dim`, row-major.
pub fn lookup(slots: &[usize], table: &HashTable<'_>) -> Vec<f64> {
    let mut out = Vec::with_capacity(slots.len() * table.feat_dim);
    for &s in slots {
        out.extend_from_slice(table.row(s));
    }
    out
}

/// Scatter-add of row gradients back into a table-shaped gradient buffer.
pub fn lookup_backward(slots: &[usize], d_feats: &[f64], feat_dim: usize, grad_table: &mut [f64]) {
    for (n, &s) in slots.iter().enumerate() {
        let src = &d_feats[n * feat_dim..(n + 1) * feat_dim];
        for (g, d) in grad_table[s * feat_dim..(s + 1) * feat_dim].iter_mut().zip(src) {
            *g += d;
        }
    }
}

/// Input of the weight network: `[stt, stt - v_min, v_max - stt]`.
pub fn weight_net_input(stt: &[f64], nb: &VertexNeighborhood) -> Vec<f64> {
    let d = stt.len();
    let mut x = Vec::with_capacity(3 * d);
    x.extend_from_slice(stt);
    x.extend(stt.iter().zip(&nb.v_min).map(|(s, m)| s - m));
    x.extend(nb.v_max.iter().zip(stt).map(|(m, s)| m - s));
    x
}

/// Softmax interpolation weights, one per vertex. The network must carry a
/// softmax output of width `2^d`.
pub fn interp_weights(net: &Mlp2<'_>, stt: &[f64], nb: &VertexNeighborhood) -> Result<Mlp2Cache> {
    if net.shape.output != nb.num_vertices() {
        return Err(Error::DimensionMismatch {
            mlp: net.name.to_string(),
            expected: nb.num_vertices(),
            got: net.shape.output,
        });
    }
    net.forward(&weight_net_input(stt, nb))
}

/// Gradient of the weight-network input mapped back onto the STT code.
/// Cell corners are piecewise constant in the code and carry no gradient.
pub fn weight_net_input_backward(d_input: &[f64], d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| d_input[i] + d_input[d + i] - d_input[2 * d + i])
        .collect()
}

/// `sum_n w_n * feats_n`.
pub fn interpolate(weights: &[f64], feats: &[f64], feat_dim: usize) -> Result<Vec<f64>> {
    if feats.len() != weights.len() * feat_dim {
        return Err(Error::ShapeMismatch(format!(
            "{} weights against {} feature values of width {feat_dim}",
            weights.len(),
            feats.len()
        )));
    }
    let mut out = vec![0.0; feat_dim];
    for (n, &w) in weights.iter().enumerate() {
        for (o, f) in out.iter_mut().zip(&feats[n * feat_dim..(n + 1) * feat_dim]) {
            *o += w * f;
        }
    }
    Ok(out)
}

/// Reverse of [`interpolate`]: `(d_weights, d_feats)`.
pub fn interpolate_backward(weights: &[f64], feats: &[f64], feat_dim: usize, d_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut d_w = Vec::with_capacity(weights.len());
    let mut d_f = Vec::with_capacity(feats.len());
    for (n, &w) in weights.iter().enumerate() {
        let row = &feats[n * feat_dim..(n + 1) * feat_dim];
        d_w.push(row.iter().zip(d_out).map(|(f, g)| f * g).sum());
        d_f.extend(d_out.iter().map(|g| w * g));
    }
    (d_w, d_f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp2Params, Mlp2Shape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn on_lattice_point_collapses_cell() {
        let n = 5;
        // Vertex 1 of 5 sits at -0.5; vertex 3 at 0.5.
        let stt = [-0.5, 0.5, -1.0, 1.0, 0.0, -0.5];
        let nb = quantize_vertices(&stt, n).unwrap();
        assert_eq!(nb.lower, nb.upper);
        let vs = nb.vertices();
        assert_eq!(vs.len(), 64);
        assert!(vs.iter().all(|v| v == &vs[0]));
        assert_eq!(nb.v_min, stt.to_vec());
    }

    #[test]
    fn origin_with_three_bins() {
        let nb = quantize_vertices(&[0.0; 6], 3).unwrap();
        assert_eq!(nb.lower, vec![1; 6]);
        assert_eq!(nb.upper, vec![1; 6]);
    }

    #[test]
    fn cell_midpoint_spans_one_cell() {
        let n = 9;
        let width = 2.0 / (n - 1) as f64;
        // Midpoint of the cell between vertices 2 and 3 in every dimension.
        let c = -1.0 + 2.5 * width;
        let nb = quantize_vertices(&[c; 6], n).unwrap();
        for i in 0..6 {
            assert!((nb.v_max[i] - nb.v_min[i] - width).abs() < 1e-12);
            assert!(nb.v_min[i] <= c && c <= nb.v_max[i]);
        }
        assert_eq!(nb.vertex(0), vec![2; 6]);
        assert_eq!(nb.vertex(63), vec![3; 6]);
        // Lexicographic: the last dimension varies fastest.
        assert_eq!(nb.vertex(1), vec![2, 2, 2, 2, 2, 3]);
        assert_eq!(nb.vertex(32), vec![3, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn out_of_range_code_rejected() {
        assert!(quantize_vertices(&[0.0, 1.01, 0.0, 0.0, 0.0, 0.0], 8).is_err());
        assert!(quantize_vertices(&[0.0; 6], 1).is_err());
    }

    #[test]
    fn slots_agree_with_hash_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let stt: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let nb = quantize_vertices(&stt, 64).unwrap();
            let slots = nb.slots(16);
            for (n, v) in nb.vertices().iter().enumerate() {
                assert_eq!(slots[n], hash_index(v, 16));
            }
        }
    }

    #[test]
    fn zero_vertex_hashes_to_zero() {
        assert_eq!(hash_index(&[0; 6], 16), 0);
        assert_eq!(hash_index(&[0; 9], 8), 0);
        assert_eq!(hash_index(&[3, 0, 0, 0, 0, 0], 16), 3);
    }

    #[test]
    fn primes_are_odd() {
        assert!(HASH_PRIMES.iter().all(|p| p % 2 == 1));
    }

    fn sub_lattice_collisions(dims: [usize; 3]) -> usize {
        let mut seen = HashSet::new();
        let mut total = 0;
        for a in 0..16u32 {
            for b in 0..16u32 {
                for c in 0..16u32 {
                    let mut v = [0u32; 6];
                    v[dims[0]] = a;
                    v[dims[1]] = b;
                    v[dims[2]] = c;
                    seen.insert(hash_index(&v, 16));
                    total += 1;
                }
            }
        }
        total - seen.len()
    }

    #[test]
    fn texture_sub_lattice_collisions_match_birthday_bound() {
        let n = 4096.0f64;
        let m = 65536.0f64;
        let q = 1.0 - 1.0 / m;
        let q2 = 1.0 - 2.0 / m;
        // Expected occupied slots and variance of the empty-slot count under uniform hashing.
        let expected = n - m * (1.0 - q.powf(n));
        let var = m * q.powf(n) + m * (m - 1.0) * q2.powf(n) - (m * q.powf(n)).powi(2);
        let got = sub_lattice_collisions([3, 4, 5]) as f64;
        assert!((got - expected).abs() <= 3.0 * var.sqrt(), "{got} vs {expected} +- {}", var.sqrt());
    }

    #[test]
    fn spatial_sub_lattice_collision_count_is_frozen() {
        // With a unit multiplier on x the low bits stay structured; the
        // exhaustive count (computed independently) is 224, above the
        // ~125 expected from uniform hashing.
        assert_eq!(sub_lattice_collisions([0, 1, 2]), 224);
    }

    #[test]
    fn lookup_gathers_rows_and_aliases() {
        let feat_dim = 2;
        let entries: Vec<f64> = (0..16 * feat_dim).map(|i| i as f64).collect();
        let table = HashTable::new(4, feat_dim, &entries).unwrap();
        let feats = lookup(&[3, 0, 3], &table);
        assert_eq!(feats, vec![6.0, 7.0, 0.0, 1.0, 6.0, 7.0]);
        let zeros = vec![0.0; 16 * feat_dim];
        let table = HashTable::new(4, feat_dim, &zeros).unwrap();
        assert!(lookup(&[1, 2, 5], &table).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_of_lookups_gradient_counts_references() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let log2 = 6;
        let fd = 3;
        let mut grad = vec![0.0; (1 << log2) * fd];
        let mut counts = vec![0usize; 1 << log2];
        for _ in 0..40 {
            let stt: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let slots = quantize_vertices(&stt, 8).unwrap().slots(log2);
            for &s in &slots {
                counts[s] += 1;
            }
            lookup_backward(&slots, &vec![1.0; slots.len() * fd], fd, &mut grad);
        }
        for (s, &c) in counts.iter().enumerate() {
            for k in 0..fd {
                assert_eq!(grad[s * fd + k], c as f64);
            }
        }
    }

    fn weight_net(rng: &mut ChaCha8Rng) -> Mlp2Params {
        Mlp2Params::glorot("hash_mlp.1", Mlp2Shape::new(18, 64, 64, Activation::Softmax), rng)
    }

    #[test]
    fn zero_output_layer_gives_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = weight_net(&mut rng);
        net.w2_mut().fill(0.0);
        let stt = [0.1, 0.2, -0.3, 0.4, 0.0, -0.9];
        let nb = quantize_vertices(&stt, 16).unwrap();
        let w = interp_weights(&net.view(), &stt, &nb).unwrap();
        assert!(w.output().iter().all(|&v| (v - 1.0 / 64.0).abs() < 1e-15));
    }

    #[test]
    fn weights_are_a_probability_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = weight_net(&mut rng);
        for _ in 0..500 {
            let stt: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let nb = quantize_vertices(&stt, 32).unwrap();
            let w = interp_weights(&net.view(), &stt, &nb).unwrap();
            let sum: f64 = w.output().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            assert!(w.output().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn permuting_logits_permutes_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = weight_net(&mut rng);
        let stt = [0.3, -0.1, 0.7, 0.2, -0.4, 0.05];
        let nb = quantize_vertices(&stt, 16).unwrap();
        let w = interp_weights(&net.view(), &stt, &nb).unwrap();

        // Swap the output rows/biases for vertices 5 and 40.
        let mut swapped = net.clone();
        let hidden = 64;
        let (a, b) = (5, 40);
        let w2 = swapped.w2_mut();
        for j in 0..hidden {
            w2.swap(a * hidden + j, b * hidden + j);
        }
        swapped.b2_mut().swap(a, b);
        let ws = interp_weights(&swapped.view(), &stt, &nb).unwrap();
        for n in 0..64 {
            let m = if n == a { b } else if n == b { a } else { n };
            assert!((ws.output()[n] - w.output()[m]).abs() < 1e-15);
        }
    }

    #[test]
    fn interpolate_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fd = 4;
        let feats: Vec<f64> = (0..64 * fd).map(|_| rng.random_range(-1.0..1.0)).collect();
        for n in [0, 17, 63] {
            let mut onehot = vec![0.0; 64];
            onehot[n] = 1.0;
            assert_eq!(interpolate(&onehot, &feats, fd).unwrap(), feats[n * fd..(n + 1) * fd].to_vec());
        }

        let row = [0.25, -0.5, 0.75, 1.0];
        let same: Vec<f64> = row.iter().cycle().take(64 * fd).copied().collect();
        let mut w: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        for (a, b) in interpolate(&w, &same, fd).unwrap().iter().zip(row) {
            assert!((a - b).abs() < 1e-14);
        }

        let got = interpolate(&w, &feats, fd).unwrap();
        for k in 0..fd {
            let mut acc = 0.0;
            for n in 0..64 {
                acc += w[n] * feats[n * fd + k];
            }
            assert!((got[k] - acc).abs() <= 1e-12 * acc.abs().max(1e-12));
        }
        assert!(interpolate(&w[..10], &feats, fd).is_err());
    }

    #[test]
    fn interpolate_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fd = 3;
        let w: Vec<f64> = (0..8).map(|_| rng.random()).collect();
        let f: Vec<f64> = (0..8 * fd).map(|_| rng.random_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..fd).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (dw, df) = interpolate_backward(&w, &f, fd, &probe);
        let obj = |w: &[f64], f: &[f64]| -> f64 {
            interpolate(w, f, fd).unwrap().iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for i in 0..w.len() {
            let mut p = w.clone();
            p[i] += h;
            let mut m = w.clone();
            m[i] -= h;
            assert!(((obj(&p, &f) - obj(&m, &f)) / (2.0 * h) - dw[i]).abs() < 1e-8);
        }
        for i in 0..f.len() {
            let mut p = f.clone();
            p[i] += h;
            let mut m = f.clone();
            m[i] -= h;
            assert!(((obj(&w, &p) - obj(&w, &m)) / (2.0 * h) - df[i]).abs() < 1e-8);
        }
    }
}
