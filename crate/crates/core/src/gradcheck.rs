//! Finite-difference verification of every hand-written reverse pass.
//!
//! Each check compares an analytic gradient against central differences,
//! skipping coordinates whose perturbation within `margin * h` changes any
//! discrete decision (ReLU pattern, lattice cell, hash slot, loss mask).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fusion;
use crate::hash::{self, HashTable};
use crate::model::{Architecture, ModelConfig, PixelTape, Sample, Stage};
use crate::nn::{finite_diff_probe, glorot_init, Activation, KinkState, Mlp2, Mlp2Cache, Mlp2Shape};
use crate::pea::{pixel_error, pixel_grad, LossKind, PixelErrorMap};
use crate::stt::LevelConfig;
use crate::trainer::{all_samples, TrainingClip};
use crate::video::synthetic_video;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub h: f64,
    pub tolerance: f64,
    /// Kink exclusion radius in units of `h`.
    pub margin: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Deliberately corrupts the analytic gradient of one group.
    pub fault: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            h: 1e-5,
            tolerance: 1e-4,
            margin: 10.0,
            floor: 1e-6,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub group: String,
    pub checked: usize,
    pub excluded: usize,
    pub worst_error: f64,
    /// Name of the tensor holding the worst coordinate.
    pub worst_param: String,
    pub worst_index: usize,
}

impl GroupResult {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.worst_error <= tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub groups: Vec<GroupResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed(self.tolerance))
    }

    pub fn failures(&self) -> impl Iterator<Item = &GroupResult> {
        self.groups.iter().filter(|g| !g.passed(self.tolerance))
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<22} {:>8} {:>9} {:>12}  {}\n",
            "group", "checked", "excluded", "worst_rel", "status"
        );
        for g in &self.groups {
            let status = if g.passed(self.tolerance) {
                "ok".to_string()
            } else {
                format!("FAIL at {}[{}]", g.worst_param, g.worst_index)
            };
            s.push_str(&format!(
                "{:<22} {:>8} {:>9} {:>12.3e}  {}\n",
                g.group, g.checked, g.excluded, g.worst_error, status
            ));
        }
        s
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// A named contiguous block of the probed vector.
struct Block {
    group: String,
    tensor: String,
    range: std::ops::Range<usize>,
}

fn compare<F>(
    opts: &GradcheckOptions,
    blocks: &[Block],
    theta: &[f64],
    analytic: &[f64],
    f: F,
) -> Result<Vec<GroupResult>>
where
    F: Fn(&[f64], usize) -> (f64, KinkState) + Sync,
{
    let (_, reference) = f(theta, usize::MAX);
    let indices: Vec<usize> = (0..theta.len()).collect();
    let probes = finite_diff_probe(&f, theta, opts.h, opts.margin, &indices, &reference)?;
    let mut out: Vec<GroupResult> = Vec::new();
    for b in blocks {
        let corrupt = opts.fault.as_deref() == Some(b.group.as_str());
        let idx = match out.iter().position(|g| g.group == b.group) {
            Some(i) => i,
            None => {
                out.push(GroupResult {
                    group: b.group.clone(),
                    checked: 0,
                    excluded: 0,
                    worst_error: 0.0,
                    worst_param: b.tensor.clone(),
                    worst_index: 0,
                });
                out.len() - 1
            }
        };
        let g = &mut out[idx];
        for i in b.range.clone() {
            let (numeric, smooth) = probes[i];
            if !smooth {
                g.excluded += 1;
                continue;
            }
            let a = if corrupt { analytic[i] * 1.1 + 1e-3 } else { analytic[i] };
            let e = relative_error(a, numeric, opts.floor);
            g.checked += 1;
            if e > g.worst_error || e.is_nan() {
                g.worst_error = if e.is_nan() { f64::INFINITY } else { e };
                g.worst_param = b.tensor.clone();
                g.worst_index = i - b.range.start;
            }
        }
    }
    Ok(out)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn relu_kinks(caches: &[&Mlp2Cache]) -> KinkState {
    KinkState {
        zero: caches.iter().flat_map(|c| c.hidden_pre.iter().copied()).collect(),
        lattice: Vec::new(),
    }
}

/// One network per output activation, probed in its parameters and input.
fn check_mlps(opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<Vec<GroupResult>> {
    let mut out = Vec::new();
    for (label, act) in [
        ("none", Activation::None),
        ("tanh", Activation::Tanh),
        ("sigmoid", Activation::Sigmoid),
        ("softmax", Activation::Softmax),
    ] {
        let shape = Mlp2Shape::new(6, 16, 5, act);
        let np = shape.num_params();
        let mut theta = vec![0.0; np];
        glorot_init(&shape, rng, &mut theta);
        for b in theta.iter_mut() {
            *b += rng.random_range(-0.1..0.1);
        }
        theta.extend(random_vec(rng, 6, 1.0));
        let probe = random_vec(rng, 5, 1.0);
        let name = format!("mlp.{label}");
        let eval = |t: &[f64]| -> Result<(f64, Mlp2Cache)> {
            let net = Mlp2::new(&name, shape, &t[..np])?;
            let c = net.forward(&t[np..])?;
            let v = c.output().iter().zip(&probe).map(|(a, b)| a * b).sum();
            Ok((v, c))
        };
        let (_, cache) = eval(&theta)?;
        let net = Mlp2::new(&name, shape, &theta[..np])?;
        let mut analytic = vec![0.0; np];
        let dx = net.backward_into(&cache, &probe, &mut analytic)?;
        analytic.extend(dx);
        let blocks = [
            Block {
                group: format!("{name}.params"),
                tensor: name.clone(),
                range: 0..np,
            },
            Block {
                group: format!("{name}.input"),
                tensor: format!("{name}.input"),
                range: np..np + 6,
            },
        ];
        out.extend(compare(opts, &blocks, &theta, &analytic, |t, _| {
            let (v, c) = eval(t).expect("shapes fixed");
            (v, relu_kinks(&[&c]))
        })?);
    }
    Ok(out)
}

/// Learned interpolation from an STT code: weight network, table rows, code.
fn check_hash(opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<Vec<GroupResult>> {
    let d = 6;
    let fd = 4;
    let log2 = 8;
    let res = 8;
    let shape = Mlp2Shape::new(3 * d, 32, 1 << d, Activation::Softmax);
    let np = shape.num_params();
    let nt = (1 << log2) * fd;
    let mut theta = vec![0.0; np];
    glorot_init(&shape, rng, &mut theta);
    theta.extend(random_vec(rng, nt, 1.0));
    theta.extend(random_vec(rng, d, 0.95));
    let probe = random_vec(rng, fd, 1.0);
    let eval = |t: &[f64]| -> Result<(f64, KinkState)> {
        let net = Mlp2::new("hash_mlp", shape, &t[..np])?;
        let stt = &t[np + nt..];
        let nb = hash::quantize_vertices(stt, res)?;
        let slots = nb.slots(log2);
        let w = hash::interp_weights(&net, stt, &nb)?;
        let feats = hash::lookup(&slots, &HashTable::new(log2, fd, &t[np..np + nt])?);
        let v = hash::interpolate(w.output(), &feats, fd)?;
        let val = v.iter().zip(&probe).map(|(a, b)| a * b).sum();
        let mut k = relu_kinks(&[&w]);
        k.lattice = stt.iter().map(|c| (c + 1.0) * 0.5 * (res - 1) as f64).collect();
        Ok((val, k))
    };
    let net = Mlp2::new("hash_mlp", shape, &theta[..np])?;
    let stt = theta[np + nt..].to_vec();
    let nb = hash::quantize_vertices(&stt, res)?;
    let slots = nb.slots(log2);
    let w = hash::interp_weights(&net, &stt, &nb)?;
    let feats = hash::lookup(&slots, &HashTable::new(log2, fd, &theta[np..np + nt])?);
    let (d_w, d_feats) = hash::interpolate_backward(w.output(), &feats, fd, &probe);
    let mut analytic = vec![0.0; theta.len()];
    let d_in = net.backward_into(&w, &d_w, &mut analytic[..np])?;
    hash::lookup_backward(&slots, &d_feats, fd, &mut analytic[np..np + nt]);
    analytic[np + nt..].copy_from_slice(&hash::weight_net_input_backward(&d_in, d));
    let blocks = [
        Block {
            group: "hash.weight_net".into(),
            tensor: "hash_mlp".into(),
            range: 0..np,
        },
        Block {
            group: "hash.table".into(),
            tensor: "table".into(),
            range: np..np + nt,
        },
        Block {
            group: "hash.stt".into(),
            tensor: "stt".into(),
            range: np + nt..theta.len(),
        },
    ];
    compare(opts, &blocks, &theta, &analytic, |t, _| eval(t).expect("shapes fixed"))
}

/// Two-level top-down gate followed by the colour decoder.
fn check_fusion(opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<Vec<GroupResult>> {
    let fd = 4;
    let att = Mlp2Shape::new(fd, 16, fd, Activation::Sigmoid);
    let col = Mlp2Shape::new(2 * fd, 16, 3, Activation::Sigmoid);
    let (na, nc) = (att.num_params(), col.num_params());
    let mut theta = vec![0.0; na + nc];
    glorot_init(&att, rng, &mut theta[..na]);
    glorot_init(&col, rng, &mut theta[na..]);
    theta.extend(random_vec(rng, 2 * fd, 1.0));
    let probe = random_vec(rng, 3, 1.0);
    fn split<'a>(t: &'a [f64], att: Mlp2Shape, col: Mlp2Shape) -> Result<(Mlp2<'a>, Mlp2<'a>)> {
        let na = att.num_params();
        let nc = col.num_params();
        Ok((Mlp2::new("attention", att, &t[..na])?, Mlp2::new("color", col, &t[na..na + nc])?))
    }
    let forward = |t: &[f64]| -> Result<(Vec<f64>, Mlp2Cache, Mlp2Cache)> {
        let (a, c) = split(t, att, col)?;
        let v = &t[na + nc..];
        let gate = fusion::attention_weights(&a, &v[fd..])?;
        let fine = fusion::refine(&v[..fd], gate.output())?;
        let hr = fusion::fuse(&fusion::LevelFeatures(vec![fine, v[fd..].to_vec()]));
        let rgb = fusion::decode_color(&c, &hr)?;
        Ok((hr, gate, rgb))
    };
    let (_, gate, rgb) = forward(&theta)?;
    let (a, c) = split(&theta, att, col)?;
    let mut analytic = vec![0.0; theta.len()];
    let d_hr = c.backward_into(&rgb, &probe, &mut analytic[na..na + nc])?;
    let v = &theta[na + nc..];
    let g = gate.output();
    let d_gate: Vec<f64> = (0..fd).map(|k| v[k] * d_hr[k]).collect();
    let d_src = a.backward_into(&gate, &d_gate, &mut analytic[..na])?;
    for k in 0..fd {
        analytic[na + nc + k] = g[k] * d_hr[k];
        analytic[na + nc + fd + k] = d_hr[fd + k] + d_src[k];
    }
    let blocks = [
        Block {
            group: "fusion.attention".into(),
            tensor: "attention".into(),
            range: 0..na,
        },
        Block {
            group: "fusion.color".into(),
            tensor: "color".into(),
            range: na..na + nc,
        },
        Block {
            group: "fusion.features".into(),
            tensor: "features".into(),
            range: na + nc..theta.len(),
        },
    ];
    compare(opts, &blocks, &theta, &analytic, |t, _| {
        let (_, gate, rgb) = forward(t).expect("shapes fixed");
        let val = rgb.output().iter().zip(&probe).map(|(a, b)| a * b).sum();
        (val, relu_kinks(&[&gate, &rgb]))
    })
}

/// PEA loss in the predicted colours of a small batch.
fn check_pea(opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<Vec<GroupResult>> {
    let n = 24;
    let kind = LossKind::default();
    let gt: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    // Spread errors across all three regimes: below epsilon, between, above tau.
    let theta: Vec<f64> = gt
        .iter()
        .enumerate()
        .flat_map(|(i, g)| {
            let amp = [0.03, 0.09, 0.4][i % 3];
            g.map(|v| v + amp * if i % 2 == 0 { 1.0 } else { -1.0 })
        })
        .collect();
    let as_px = |t: &[f64]| -> Vec<[f64; 3]> { t.chunks(3).map(|c| [c[0], c[1], c[2]]).collect() };
    let inv_n = 1.0 / n as f64;
    let analytic: Vec<f64> = as_px(&theta)
        .iter()
        .zip(&gt)
        .flat_map(|(p, g)| pixel_grad(p, g, kind.pixel_term(pixel_error(p, g)).1, inv_n))
        .collect();
    let blocks = [Block {
        group: "pea.prediction".into(),
        tensor: "prediction".into(),
        range: 0..theta.len(),
    }];
    compare(opts, &blocks, &theta, &analytic, |t, _| {
        let errs: Vec<f64> = as_px(t).iter().zip(&gt).map(|(p, g)| pixel_error(p, g)).collect();
        let k = KinkState {
            zero: errs.iter().flat_map(|&e| kind.kinks(e).unwrap_or_default()).collect(),
            lattice: Vec::new(),
        };
        (kind.total(&PixelErrorMap(errs)), k)
    })
}

/// The smallest full model: two levels, a tiny table, a 2-frame 6x6 clip at x2.
pub fn end_to_end_config() -> ModelConfig {
    ModelConfig {
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
        ..ModelConfig::default()
    }
}

/// Full-model check over every parameter of [`end_to_end_config`].
///
/// Tables are drawn from [-1, 1] rather than the tiny training init so that
/// gradients reaching the texture networks are well above rounding noise.
/// Each probe re-evaluates only the pipeline stages downstream of the
/// perturbed parameter, and for a table entry only the pixels reading it.
pub fn check_end_to_end(opts: &GradcheckOptions) -> Result<Vec<GroupResult>> {
    let arch = Architecture::new(end_to_end_config())?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xE2E);
    let mut theta = arch.init_params(opts.seed);
    for l in &arch.levels {
        for v in &mut theta[l.table.range()] {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let clip = TrainingClip::new(synthetic_video(2, 6, 6, opts.seed), 2.0)?;
    let samples: Vec<Sample> = all_samples(&clip, 0);
    let loss = LossKind::default();
    let frames = &clip.upsampled;
    let analytic = arch.batch_gradient(&theta, &[frames], &samples, &loss)?.grad.to_dense(theta.len());

    let pixel = |tape: &PixelTape, target: &[f64; 3]| -> (f64, KinkState) {
        let err = pixel_error(&tape.rgb(), target);
        let mut k = KinkState::default();
        arch.collect_kinks(tape, &mut k);
        k.zero.extend(loss.kinks(err).unwrap_or_default());
        (loss.pixel_term(err).0, k)
    };
    let base: Vec<(PixelTape, f64, KinkState)> = samples
        .iter()
        .map(|s| {
            let tape = arch.forward_pixel(&theta, frames, s.coord)?;
            let (term, kinks) = pixel(&tape, &s.target);
            Ok((tape, term, kinks))
        })
        .collect::<Result<_>>()?;
    let inv_n = 1.0 / samples.len() as f64;
    let eval = |t: &[f64], index: usize| -> (f64, KinkState) {
        let stage = arch.stage_of(index);
        let table_slot = match stage {
            Some(Stage::Table(l)) => Some((l, (index - arch.levels[l].table.offset) / arch.config.feat_dim)),
            _ => None,
        };
        let mut total = 0.0;
        let mut kinks = KinkState::default();
        for (s, (tape, term, k)) in samples.iter().zip(&base) {
            let untouched = table_slot.is_some_and(|(l, slot)| !tape.levels[l].slots.contains(&slot));
            match stage {
                Some(stage) if !untouched => {
                    let tape = arch
                        .forward_pixel_from(t, frames, s.coord, tape, stage)
                        .expect("valid model");
                    let (term, k) = pixel(&tape, &s.target);
                    total += term;
                    kinks.extend(&k);
                }
                _ => {
                    total += term;
                    kinks.extend(k);
                }
            }
        }
        (total * inv_n, kinks)
    };
    let blocks: Vec<Block> = arch
        .layout
        .entries()
        .iter()
        .map(|e| Block {
            group: e.group().to_string(),
            tensor: e.name.clone(),
            range: e.range(),
        })
        .collect();
    compare(opts, &blocks, &theta, &analytic, eval)
}

/// The per-module checks only; these take well under a second.
pub fn run_modules(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut groups = check_mlps(opts, &mut rng)?;
    groups.extend(check_hash(opts, &mut rng)?);
    groups.extend(check_fusion(opts, &mut rng)?);
    groups.extend(check_pea(opts, &mut rng)?);
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        groups,
    })
}

/// Every module-level check followed by the end-to-end check.
pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut report = run_modules(opts)?;
    report.groups.extend(check_end_to_end(opts)?);
    Ok(report)
}
