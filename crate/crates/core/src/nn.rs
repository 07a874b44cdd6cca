//! Small differentiable kernel for the fixed network family used by the
//! model: two-layer ReLU perceptrons with an optional output squashing,
//! a flat parameter layout, Adam, and a central-difference gradient oracle.
//!
//! Every network reads its weights from a contiguous slice laid out as
//! `[w1 (hidden x input, row-major), b1, w2 (output x hidden, row-major), b2]`.
//! Gradients use the same layout, so a model's parameters and gradients are
//! both single flat vectors described by a [`ParamLayout`].

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Tanh,
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp2Shape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Mlp2Shape {
    pub fn new(input: usize, hidden: usize, output: usize, activation: Activation) -> Self {
        Self {
            input,
            hidden,
            output,
            activation,
        }
    }

    pub fn num_params(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    fn b1_offset(&self) -> usize {
        self.hidden * self.input
    }

    fn w2_offset(&self) -> usize {
        self.b1_offset() + self.hidden
    }

    fn b2_offset(&self) -> usize {
        self.w2_offset() + self.output * self.hidden
    }

    /// Named sub-tensors in layout order, relative to the network's offset.
    pub fn tensors(&self) -> [(&'static str, Vec<usize>); 4] {
        [
            ("w1", vec![self.hidden, self.input]),
            ("b1", vec![self.hidden]),
            ("w2", vec![self.output, self.hidden]),
            ("b2", vec![self.output]),
        ]
    }
}

/// Uniform Glorot initialisation for the weights, zero biases.
pub fn glorot_init<R: Rng + ?Sized>(shape: &Mlp2Shape, rng: &mut R, out: &mut [f64]) {
    assert_eq!(out.len(), shape.num_params());
    out.fill(0.0);
    let limit1 = (6.0 / (shape.input + shape.hidden) as f64).sqrt();
    for w in &mut out[..shape.b1_offset()] {
        *w = rng.random_range(-limit1..=limit1);
    }
    let limit2 = (6.0 / (shape.hidden + shape.output) as f64).sqrt();
    for w in &mut out[shape.w2_offset()..shape.b2_offset()] {
        *w = rng.random_range(-limit2..=limit2);
    }
}

/// Borrowed view of one network's parameters.
#[derive(Debug, Clone, Copy)]
pub struct Mlp2<'a> {
    pub name: &'a str,
    pub shape: Mlp2Shape,
    pub params: &'a [f64],
}

/// Activations recorded by [`Mlp2::forward`] and consumed by [`Mlp2::backward_into`].
#[derive(Debug, Clone)]
pub struct Mlp2Cache {
    owner: usize,
    shape: Mlp2Shape,
    pub input: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub output_pre: Vec<f64>,
    pub output: Vec<f64>,
}

impl Mlp2Cache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl<'a> Mlp2<'a> {
    pub fn new(name: &'a str, shape: Mlp2Shape, params: &'a [f64]) -> Result<Self> {
        if params.len() != shape.num_params() {
            return Err(Error::DimensionMismatch {
                mlp: name.to_string(),
                expected: shape.num_params(),
                got: params.len(),
            });
        }
        Ok(Self {
            name,
            shape,
            params,
        })
    }

    fn w1(&self) -> &'a [f64] {
        &self.params[..self.shape.b1_offset()]
    }

    fn b1(&self) -> &'a [f64] {
        &self.params[self.shape.b1_offset()..self.shape.w2_offset()]
    }

    fn w2(&self) -> &'a [f64] {
        &self.params[self.shape.w2_offset()..self.shape.b2_offset()]
    }

    fn b2(&self) -> &'a [f64] {
        &self.params[self.shape.b2_offset()..]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Mlp2Cache> {
        let s = self.shape;
        if x.len() != s.input {
            return Err(Error::DimensionMismatch {
                mlp: self.name.to_string(),
                expected: s.input,
                got: x.len(),
            });
        }
        let w1 = self.w1();
        let b1 = self.b1();
        let hidden_pre: Vec<f64> = (0..s.hidden)
            .map(|j| b1[j] + dot(&w1[j * s.input..(j + 1) * s.input], x))
            .collect();
        let hidden: Vec<f64> = hidden_pre.iter().map(|&z| z.max(0.0)).collect();
        let w2 = self.w2();
        let b2 = self.b2();
        let output_pre: Vec<f64> = (0..s.output)
            .map(|k| b2[k] + dot(&w2[k * s.hidden..(k + 1) * s.hidden], &hidden))
            .collect();
        let mut output = output_pre.clone();
        match s.activation {
            Activation::None => {}
            Activation::Tanh => output.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Sigmoid => output.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Softmax => softmax_in_place(&mut output),
        }
        Ok(Mlp2Cache {
            owner: self.params.as_ptr() as usize,
            shape: s,
            input: x.to_vec(),
            hidden_pre,
            output_pre,
            output,
        })
    }

    /// Reverse pass. Adds parameter gradients into `grad` (same layout as
    /// the parameters) and returns the gradient with respect to the input.
    pub fn backward_into(&self, cache: &Mlp2Cache, dy: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        self.backward_impl(cache, dy, grad, true).map(|dx| dx.expect("requested"))
    }

    /// As [`Mlp2::backward_into`] but skips the input gradient.
    pub fn backward_params_into(&self, cache: &Mlp2Cache, dy: &[f64], grad: &mut [f64]) -> Result<()> {
        self.backward_impl(cache, dy, grad, false).map(|_| ())
    }

    fn backward_impl(&self, cache: &Mlp2Cache, dy: &[f64], grad: &mut [f64], want_dx: bool) -> Result<Option<Vec<f64>>> {
        let s = self.shape;
        if cache.owner != self.params.as_ptr() as usize || cache.shape != s {
            return Err(Error::StaleCache {
                mlp: self.name.to_string(),
            });
        }
        if dy.len() != s.output {
            return Err(Error::DimensionMismatch {
                mlp: self.name.to_string(),
                expected: s.output,
                got: dy.len(),
            });
        }
        if grad.len() != s.num_params() {
            return Err(Error::DimensionMismatch {
                mlp: self.name.to_string(),
                expected: s.num_params(),
                got: grad.len(),
            });
        }

        let y = &cache.output;
        let d_out: Vec<f64> = match s.activation {
            Activation::None => dy.to_vec(),
            Activation::Tanh => dy.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
            Activation::Sigmoid => dy.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
            Activation::Softmax => {
                let inner = dot(dy, y);
                dy.iter().zip(y).map(|(g, y)| y * (g - inner)).collect()
            }
        };

        let (g_w1, rest) = grad.split_at_mut(s.b1_offset());
        let (g_b1, rest) = rest.split_at_mut(s.hidden);
        let (g_w2, g_b2) = rest.split_at_mut(s.output * s.hidden);

        let hidden: Vec<f64> = cache.hidden_pre.iter().map(|&z| z.max(0.0)).collect();
        let w2 = self.w2();
        let mut d_hidden = vec![0.0; s.hidden];
        for (k, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            g_b2[k] += g;
            axpy(g, &hidden, &mut g_w2[k * s.hidden..(k + 1) * s.hidden]);
            axpy(g, &w2[k * s.hidden..(k + 1) * s.hidden], &mut d_hidden);
        }

        let w1 = self.w1();
        let mut dx = if want_dx { Some(vec![0.0; s.input]) } else { None };
        for j in 0..s.hidden {
            // relu'(0) = 0
            if cache.hidden_pre[j] <= 0.0 || d_hidden[j] == 0.0 {
                continue;
            }
            let g = d_hidden[j];
            g_b1[j] += g;
            axpy(g, &cache.input, &mut g_w1[j * s.input..(j + 1) * s.input]);
            if let Some(dx) = dx.as_mut() {
                axpy(g, &w1[j * s.input..(j + 1) * s.input], dx);
            }
        }
        Ok(dx)
    }

    /// Reverse pass returning a fresh `(dx, dparams)` pair.
    pub fn backward(&self, cache: &Mlp2Cache, dy: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grad = vec![0.0; self.shape.num_params()];
        let dx = self.backward_into(cache, dy, &mut grad)?;
        Ok((dx, grad))
    }
}

/// Owned parameters of a single network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2Params {
    pub name: String,
    pub shape: Mlp2Shape,
    pub data: Vec<f64>,
}

impl Mlp2Params {
    pub fn zeros(name: impl Into<String>, shape: Mlp2Shape) -> Self {
        Self {
            name: name.into(),
            shape,
            data: vec![0.0; shape.num_params()],
        }
    }

    pub fn glorot<R: Rng + ?Sized>(name: impl Into<String>, shape: Mlp2Shape, rng: &mut R) -> Self {
        let mut p = Self::zeros(name, shape);
        glorot_init(&shape, rng, &mut p.data);
        p
    }

    pub fn view(&self) -> Mlp2<'_> {
        Mlp2 {
            name: &self.name,
            shape: self.shape,
            params: &self.data,
        }
    }

    pub fn w1_mut(&mut self) -> &mut [f64] {
        let end = self.shape.b1_offset();
        &mut self.data[..end]
    }

    pub fn b1_mut(&mut self) -> &mut [f64] {
        let (a, b) = (self.shape.b1_offset(), self.shape.w2_offset());
        &mut self.data[a..b]
    }

    pub fn w2_mut(&mut self) -> &mut [f64] {
        let (a, b) = (self.shape.w2_offset(), self.shape.b2_offset());
        &mut self.data[a..b]
    }

    pub fn b2_mut(&mut self) -> &mut [f64] {
        let a = self.shape.b2_offset();
        &mut self.data[a..]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Everything before the last `.`, e.g. `texture.1` for `texture.1.w1`.
    pub fn group(&self) -> &str {
        self.name.rsplit_once('.').map_or(&self.name, |(g, _)| g)
    }
}

/// Ordered map from tensor names to ranges of one flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> usize {
        let offset = self.len;
        let entry = ParamEntry {
            name: name.into(),
            shape,
            offset,
        };
        self.len += entry.len();
        self.entries.push(entry);
        offset
    }

    /// Appends the four tensors of a network under `prefix`.
    pub fn push_mlp(&mut self, prefix: &str, shape: &Mlp2Shape) -> usize {
        let offset = self.len;
        for (name, dims) in shape.tensors() {
            self.push(format!("{prefix}.{name}"), dims);
        }
        offset
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Name of the tensor containing flat index `index`.
    pub fn name_of(&self, index: usize) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.range().contains(&index))
            .map(|e| e.name.as_str())
    }

    /// Distinct groups with their contiguous flat ranges, in layout order.
    pub fn groups(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out: Vec<(String, std::ops::Range<usize>)> = Vec::new();
        for e in &self.entries {
            match out.last_mut() {
                Some((g, r)) if g == e.group() && r.end == e.offset => r.end = e.range().end,
                _ => out.push((e.group().to_string(), e.range())),
            }
        }
        out
    }

    pub fn is_consistent(&self) -> bool {
        let mut next = 0;
        for e in &self.entries {
            if e.offset != next {
                return false;
            }
            next += e.len();
        }
        next == self.len
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update. Rejects non-finite gradients before touching any state.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Central differences `(f(θ + h e_i) - f(θ - h e_i)) / 2h` for every coordinate.
pub fn finite_diff_grad<F>(mut f: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut theta = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = f(&theta);
        theta[i] = orig - h;
        let minus = f(&theta);
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteObjective { index: i });
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Quantities that select a branch of a piecewise-smooth function: the
/// sign of each `zero` entry, and the integer cell of each `lattice` entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KinkState {
    pub zero: Vec<f64>,
    pub lattice: Vec<f64>,
}

impl KinkState {
    pub fn clear(&mut self) {
        self.zero.clear();
        self.lattice.clear();
    }

    pub fn extend(&mut self, other: &KinkState) {
        self.zero.extend_from_slice(&other.zero);
        self.lattice.extend_from_slice(&other.lattice);
    }

    /// Whether, extrapolating linearly from two probes at `+-h`, some branch
    /// boundary lies within `margin * h` of `self`.
    pub fn near_kink(&self, plus: &KinkState, minus: &KinkState, margin: f64) -> bool {
        let same_len = |a: &KinkState| a.zero.len() == self.zero.len() && a.lattice.len() == self.lattice.len();
        if !same_len(plus) || !same_len(minus) {
            return true;
        }
        let close = |q0: f64, p: f64, m: f64, dist: f64| {
            let step = (p - q0).abs().max((m - q0).abs());
            step > 0.0 && dist <= margin * step
        };
        let zero = (0..self.zero.len()).any(|j| {
            let q = self.zero[j];
            close(q, plus.zero[j], minus.zero[j], q.abs())
        });
        zero || (0..self.lattice.len()).any(|j| {
            let u = self.lattice[j];
            close(u, plus.lattice[j], minus.lattice[j], (u - u.round()).abs())
        })
    }
}

/// Parallel central differences over a subset of coordinates. `f` receives
/// the perturbed vector and index, and returns the objective with the
/// [`KinkState`] of its evaluation. Each result carries whether the
/// coordinate is at least `margin * h` away from every kink.
pub fn finite_diff_probe<F>(
    f: F,
    params: &[f64],
    h: f64,
    margin: f64,
    indices: &[usize],
    reference: &KinkState,
) -> Result<Vec<(f64, bool)>>
where
    F: Fn(&[f64], usize) -> (f64, KinkState) + Sync,
{
    if !(h > 0.0) || !(margin >= 1.0) {
        return Err(Error::InvalidArgument(format!("need h > 0 and margin >= 1, got {h} and {margin}")));
    }
    indices
        .par_iter()
        .map_init(
            || params.to_vec(),
            |theta, &i| {
                let orig = theta[i];
                theta[i] = orig + h;
                let (plus, k_plus) = f(theta, i);
                theta[i] = orig - h;
                let (minus, k_minus) = f(theta, i);
                theta[i] = orig;
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(Error::NonFiniteObjective { index: i });
                }
                let smooth = !reference.near_kink(&k_plus, &k_minus, margin);
                Ok(((plus - minus) / (2.0 * h), smooth))
            },
        )
        .collect()
}
