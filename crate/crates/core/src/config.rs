//! Flat `key=value` configuration with dotted keys.
//!
//! ```text
//! # comments and blank lines are ignored
//! train.epochs=200
//! model.levels=3
//! model.patch_sizes=3,5,7
//! pea.alpha=5
//! ```

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pea::{LossKind, PeaConfig};
use crate::stt::LevelConfig;
use crate::trainer::TrainConfig;

pub const KEYS: &[&str] = &[
    "train.scale",
    "train.epochs",
    "train.batch",
    "train.lr0",
    "train.lr_halve_every",
    "train.seed",
    "loss",
    "pea.tau",
    "pea.epsilon",
    "pea.delta",
    "pea.alpha",
    "model.levels",
    "model.patch_sizes",
    "model.grid_resolutions",
    "model.feature_code_len",
    "model.table_log2_size",
    "model.feat_dim",
    "model.hidden",
    "model.attention",
    "model.raw_coarse_attention",
];

fn err(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| err(line, key, format!("cannot parse `{v}`")))
}

fn list(line: usize, key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| value(line, key, s.trim())).collect()
}

fn flag(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(err(line, key, format!("expected true or false, got `{v}`"))),
    }
}

/// Accumulates assignments; level lists are reconciled at the end.
#[derive(Debug, Clone, Default)]
pub struct ConfigBuilder {
    cfg: TrainConfig,
    pea: PeaConfig,
    use_pea: bool,
    levels: Option<(usize, usize)>,
    patch_sizes: Option<(usize, Vec<usize>)>,
    grid_resolutions: Option<(usize, Vec<usize>)>,
}

impl ConfigBuilder {
    pub fn new(base: TrainConfig) -> Self {
        let (pea, use_pea) = match base.loss {
            LossKind::Pea(p) => (p, true),
            LossKind::Mse => (PeaConfig::default(), false),
        };
        Self {
            cfg: base,
            pea,
            use_pea,
            ..Self::default()
        }
    }

    /// Applies one assignment; `line` is only used in error messages.
    pub fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let c = &mut self.cfg;
        match key {
            "train.scale" => c.scale = value(line, key, v)?,
            "train.epochs" => c.epochs = value(line, key, v)?,
            "train.batch" => c.batch_coords = value(line, key, v)?,
            "train.lr0" => c.lr0 = value(line, key, v)?,
            "train.lr_halve_every" => c.lr_halve_every = value(line, key, v)?,
            "train.seed" => c.seed = value(line, key, v)?,
            "loss" => {
                self.use_pea = match v {
                    "pea" => true,
                    "mse" => false,
                    _ => return Err(err(line, key, format!("expected pea or mse, got `{v}`"))),
                }
            }
            "pea.tau" => self.pea.tau = value(line, key, v)?,
            "pea.epsilon" => self.pea.epsilon = value(line, key, v)?,
            "pea.delta" => self.pea.delta = value(line, key, v)?,
            "pea.alpha" => self.pea.alpha = value(line, key, v)?,
            "model.levels" => self.levels = Some((line, value(line, key, v)?)),
            "model.patch_sizes" => self.patch_sizes = Some((line, list(line, key, v)?)),
            "model.grid_resolutions" => self.grid_resolutions = Some((line, list(line, key, v)?)),
            "model.feature_code_len" => c.model.feature_code_len = value(line, key, v)?,
            "model.table_log2_size" => c.model.table_log2_size = value(line, key, v)?,
            "model.feat_dim" => c.model.feat_dim = value(line, key, v)?,
            "model.hidden" => c.model.hidden = value(line, key, v)?,
            "model.attention" => c.model.attention = flag(line, key, v)?,
            "model.raw_coarse_attention" => c.model.raw_coarse_attention = flag(line, key, v)?,
            _ => return Err(err(line, key, "unknown key")),
        }
        Ok(())
    }

    pub fn build(mut self) -> Result<TrainConfig> {
        let current = self.cfg.model.levels.clone();
        let n = match (&self.levels, &self.patch_sizes, &self.grid_resolutions) {
            (Some((_, n)), _, _) => *n,
            (None, Some((_, p)), _) => p.len(),
            (None, None, Some((_, g))) => g.len(),
            (None, None, None) => current.len(),
        };
        if n == 0 {
            let line = self.levels.map_or(0, |(l, _)| l);
            return Err(err(line, "model.levels", "at least one level is required"));
        }
        // Levels not listed explicitly extend the current ones: patch +2, resolution /2.
        let extend = |i: usize| -> LevelConfig {
            current.get(i).copied().unwrap_or_else(|| {
                let last = current.last().copied().unwrap_or(LevelConfig {
                    patch_size: 3,
                    grid_resolution: 64,
                });
                let k = i + 1 - current.len();
                LevelConfig {
                    patch_size: last.patch_size + 2 * k,
                    grid_resolution: (last.grid_resolution >> k).max(2),
                }
            })
        };
        let mut levels: Vec<LevelConfig> = (0..n).map(extend).collect();
        for (key, given) in [
            ("model.patch_sizes", &self.patch_sizes),
            ("model.grid_resolutions", &self.grid_resolutions),
        ] {
            if let Some((line, vals)) = given {
                if vals.len() != n {
                    return Err(err(*line, key, format!("{} entries for {n} levels", vals.len())));
                }
                for (l, &v) in levels.iter_mut().zip(vals) {
                    if key == "model.patch_sizes" {
                        l.patch_size = v;
                    } else {
                        l.grid_resolution = v;
                    }
                }
            }
        }
        self.cfg.model.levels = levels;
        self.cfg.loss = if self.use_pea {
            LossKind::Pea(self.pea)
        } else {
            LossKind::Mse
        };
        self.cfg.validate().map_err(|e| err(0, "config", e.to_string()))?;
        Ok(self.cfg)
    }
}

/// Applies the lines of `text` on top of `base`.
pub fn parse_onto(base: TrainConfig, text: &str) -> Result<TrainConfig> {
    let mut b = ConfigBuilder::new(base);
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(i + 1, line, "expected key=value"))?;
        b.set(i + 1, k.trim(), v.trim())?;
    }
    b.build()
}

pub fn parse(text: &str) -> Result<TrainConfig> {
    parse_onto(TrainConfig::default(), text)
}

/// Canonical text form; `parse(to_text(c)) == c` bit for bit.
pub fn to_text(c: &TrainConfig) -> String {
    let join = |f: fn(&LevelConfig) -> usize| {
        c.model.levels.iter().map(|l| f(l).to_string()).collect::<Vec<_>>().join(",")
    };
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push('=');
        out.push_str(&v);
        out.push('\n');
    };
    kv("train.scale", c.scale.to_string());
    kv("train.epochs", c.epochs.to_string());
    kv("train.batch", c.batch_coords.to_string());
    kv("train.lr0", c.lr0.to_string());
    kv("train.lr_halve_every", c.lr_halve_every.to_string());
    kv("train.seed", c.seed.to_string());
    match c.loss {
        LossKind::Pea(p) => {
            kv("loss", "pea".into());
            kv("pea.tau", p.tau.to_string());
            kv("pea.epsilon", p.epsilon.to_string());
            kv("pea.delta", p.delta.to_string());
            kv("pea.alpha", p.alpha.to_string());
        }
        LossKind::Mse => kv("loss", "mse".into()),
    }
    kv("model.levels", c.model.levels.len().to_string());
    kv("model.patch_sizes", join(|l| l.patch_size));
    kv("model.grid_resolutions", join(|l| l.grid_resolution));
    kv("model.feature_code_len", c.model.feature_code_len.to_string());
    kv("model.table_log2_size", c.model.table_log2_size.to_string());
    kv("model.feat_dim", c.model.feat_dim.to_string());
    kv("model.hidden", c.model.hidden.to_string());
    kv("model.attention", c.model.attention.to_string());
    kv("model.raw_coarse_attention", c.model.raw_coarse_attention.to_string());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trip() {
        let c = TrainConfig::default();
        assert_eq!(parse(&to_text(&c)).unwrap(), c);
        assert_eq!(parse("").unwrap(), c);
    }

    #[test]
    fn awkward_floats_round_trip() {
        let c = TrainConfig {
            lr0: 0.1 + 0.2,
            scale: 2.7,
            loss: LossKind::Pea(PeaConfig {
                tau: 1.0 / 3.0,
                ..PeaConfig::default()
            }),
            ..TrainConfig::default()
        };
        assert_eq!(parse(&to_text(&c)).unwrap(), c);
        let mse = TrainConfig {
            loss: LossKind::Mse,
            ..TrainConfig::default()
        };
        assert_eq!(parse(&to_text(&mse)).unwrap(), mse);
    }

    #[test]
    fn level_count_truncates_and_extends() {
        let two = parse("model.levels=2").unwrap();
        assert_eq!(two.model.levels.len(), 2);
        assert_eq!(two.model.levels[1].patch_size, 5);
        let four = parse("model.levels=4").unwrap();
        assert_eq!(four.model.levels[3].patch_size, 9);
        assert_eq!(four.model.levels[3].grid_resolution, 8);
        let listed = parse("model.patch_sizes=3,7\nmodel.grid_resolutions=8,4").unwrap();
        assert_eq!(listed.model.levels.len(), 2);
        assert_eq!(listed.model.levels[1].patch_size, 7);
    }

    #[test]
    fn errors_name_line_and_key() {
        let e = parse("# header\ntrain.epochs=12\npea.alpha=five\n").unwrap_err();
        match e {
            Error::Config { line, key, .. } => {
                assert_eq!(line, 3);
                assert_eq!(key, "pea.alpha");
            }
            other => panic!("{other}"),
        }
        let e = parse("model.levels=3\nmodel.patch_sizes=3,5\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }));
        assert!(matches!(parse("bogus=1").unwrap_err(), Error::Config { line: 1, .. }));
        assert!(matches!(parse("no equals sign").unwrap_err(), Error::Config { line: 1, .. }));
        assert!(parse("train.scale=1").is_err());
        assert!(parse("model.attention=maybe").is_err());
    }

    #[test]
    fn every_key_is_emitted() {
        let text = to_text(&TrainConfig::default());
        for k in KEYS {
            assert!(text.lines().any(|l| l.starts_with(&format!("{k}="))), "{k}");
        }
    }
}
