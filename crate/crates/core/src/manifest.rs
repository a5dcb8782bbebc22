//! Experiment manifest: `key = value` lines under `[model]`, `[train]` and
//! `[data]` sections. Every key has a default, so an empty file is valid, and
//! unknown keys are rejected.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::data::{ShapeKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PoolingKind};
use crate::train::{LossKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataConfig {
    /// Synthetic generator settings used by `gen-data`.
    pub synthetic: SyntheticSpec,
    /// Square side to centre-crop and resize loaded samples to; 0 keeps
    /// them as stored.
    pub resize: usize,
    pub split_seed: u64,
}

impl DataConfig {
    pub fn resize_target(&self) -> Option<usize> {
        (self.resize > 0).then_some(self.resize)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn parse_value<V: FromStr>(key: &str, raw: &str) -> Result<V> {
    raw.parse().map_err(|_| Error::Parse(format!("invalid value `{raw}` for `{key}`")))
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(Error::Parse(format!("invalid value `{raw}` for `{key}` (expected true|false)"))),
    }
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',').map(|s| parse_value(key, s.trim())).collect()
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        let mut section: Option<String> = None;
        let mut seen = std::collections::HashSet::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |e: Error| match e {
                Error::Parse(msg) => Error::Parse(format!("manifest line {}: {msg}", no + 1)),
                other => other,
            };
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if !matches!(name, "model" | "train" | "data") {
                    return Err(at(Error::Parse(format!("unknown section [{name}]"))));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(at(Error::Parse(format!("expected `key = value`, got `{line}`"))));
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(sec) = &section else {
                return Err(at(Error::Parse(format!("`{key}` appears before any section"))));
            };
            if !seen.insert(format!("{sec}.{key}")) {
                return Err(at(Error::Parse(format!("duplicate key `{key}` in [{sec}]"))));
            }
            m.set(sec, key, value).map_err(at)?;
        }
        m.model.validate()?;
        m.train.validate()?;
        m.data.synthetic.validate()?;
        Ok(m)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let (model, train, data) = (&mut self.model, &mut self.train, &mut self.data);
        let syn = &mut data.synthetic;
        match (section, key) {
            ("model", "levels") => model.levels = parse_value(key, v)?,
            ("model", "channels") => model.channels = parse_list(key, v)?,
            ("model", "bottleneck") => model.bottleneck = parse_value(key, v)?,
            ("model", "block_depth") => model.block_depth = parse_value(key, v)?,
            ("model", "pooling") => model.pooling = v.parse::<PoolingKind>()?,
            ("model", "residual") => model.residual = parse_bool(key, v)?,
            ("model", "attention_gates") => model.attention_gates = parse_bool(key, v)?,
            ("model", "in_channels") => model.in_channels = parse_value(key, v)?,
            ("model", "classes") => model.classes = parse_value(key, v)?,
            ("model", "gn_groups") => model.gn_groups = parse_value(key, v)?,
            ("model", "leaky_slope") => model.leaky_slope = parse_value(key, v)?,
            ("model", "kernel") => model.kernel = parse_value(key, v)?,
            ("train", "epochs") => train.epochs = parse_value(key, v)?,
            ("train", "batch_size") => train.batch_size = parse_value(key, v)?,
            ("train", "lr") => train.lr = parse_value(key, v)?,
            ("train", "loss") => train.loss = v.parse::<LossKind>()?,
            ("train", "beta1") => train.beta1 = parse_value(key, v)?,
            ("train", "beta2") => train.beta2 = parse_value(key, v)?,
            ("train", "eps") => train.eps = parse_value(key, v)?,
            ("train", "seed") => train.seed = parse_value(key, v)?,
            ("train", "eval_every") => train.eval_every = parse_value(key, v)?,
            ("data", "count") => syn.count = parse_value(key, v)?,
            ("data", "size") => syn.size = parse_value(key, v)?,
            ("data", "shapes") => syn.shapes = v.parse::<ShapeKind>()?,
            ("data", "noise") => syn.noise = parse_value(key, v)?,
            ("data", "hair") => syn.hair = parse_bool(key, v)?,
            ("data", "gradient") => syn.gradient = parse_bool(key, v)?,
            ("data", "channels") => syn.channels = parse_value(key, v)?,
            ("data", "seed") => syn.seed = parse_value(key, v)?,
            ("data", "resize") => data.resize = parse_value(key, v)?,
            ("data", "split_seed") => data.split_seed = parse_value(key, v)?,
            _ => return Err(Error::Parse(format!("unknown key `{key}` in [{section}]"))),
        }
        Ok(())
    }

    /// The `[model]` section alone.
    pub fn model_text(&self) -> String {
        let c = &self.model;
        let channels: Vec<String> = c.channels.iter().map(|w| w.to_string()).collect();
        let mut s = String::from("[model]\n");
        let _ = writeln!(s, "levels = {}", c.levels);
        let _ = writeln!(s, "channels = {}", channels.join(","));
        let _ = writeln!(s, "bottleneck = {}", c.bottleneck);
        let _ = writeln!(s, "block_depth = {}", c.block_depth);
        let _ = writeln!(s, "pooling = {}", c.pooling);
        let _ = writeln!(s, "residual = {}", c.residual);
        let _ = writeln!(s, "attention_gates = {}", c.attention_gates);
        let _ = writeln!(s, "in_channels = {}", c.in_channels);
        let _ = writeln!(s, "classes = {}", c.classes);
        let _ = writeln!(s, "gn_groups = {}", c.gn_groups);
        let _ = writeln!(s, "leaky_slope = {}", c.leaky_slope);
        let _ = writeln!(s, "kernel = {}", c.kernel);
        s
    }
}

/// Fully resolved manifest, defaults included. Parsing the output yields an
/// equal manifest.
impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.model_text())?;
        let t = &self.train;
        writeln!(f, "\n[train]")?;
        writeln!(f, "epochs = {}", t.epochs)?;
        writeln!(f, "batch_size = {}", t.batch_size)?;
        writeln!(f, "lr = {}", t.lr)?;
        writeln!(f, "loss = {}", t.loss)?;
        writeln!(f, "beta1 = {}", t.beta1)?;
        writeln!(f, "beta2 = {}", t.beta2)?;
        writeln!(f, "eps = {}", t.eps)?;
        writeln!(f, "seed = {}", t.seed)?;
        writeln!(f, "eval_every = {}", t.eval_every)?;
        let d = &self.data;
        let s = &d.synthetic;
        writeln!(f, "\n[data]")?;
        writeln!(f, "count = {}", s.count)?;
        writeln!(f, "size = {}", s.size)?;
        writeln!(f, "shapes = {}", s.shapes)?;
        writeln!(f, "noise = {}", s.noise)?;
        writeln!(f, "hair = {}", s.hair)?;
        writeln!(f, "gradient = {}", s.gradient)?;
        writeln!(f, "channels = {}", s.channels)?;
        writeln!(f, "seed = {}", s.seed)?;
        writeln!(f, "resize = {}", d.resize)?;
        writeln!(f, "split_seed = {}", d.split_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        assert_eq!(Manifest::parse("").unwrap(), Manifest::default());
        assert_eq!(Manifest::parse("# nothing\n\n").unwrap(), Manifest::default());
    }

    #[test]
    fn resolved_round_trip() {
        let text = "[model]\nchannels = 8, 16, 32, 64\nbottleneck = 128\npooling = max\n[train]\nlr = 0.003\nloss = bce\n[data]\nresize = 32\n";
        let m = Manifest::parse(text).unwrap();
        assert_eq!(m.model.channels, [8, 16, 32, 64]);
        assert_eq!(m.model.pooling, PoolingKind::Max);
        assert_eq!(m.train.lr, 0.003);
        assert_eq!(m.data.resize_target(), Some(32));
        assert_eq!(Manifest::parse(&m.to_string()).unwrap(), m);
        let d = Manifest::default();
        assert_eq!(Manifest::parse(&d.to_string()).unwrap(), d);
    }

    #[test]
    fn rejects_typos_and_structure_errors() {
        let err = Manifest::parse("[model]\nchanels = 8\n").unwrap_err().to_string();
        assert!(err.contains("unknown key `chanels`") && err.contains("line 2"), "{err}");
        assert!(Manifest::parse("levels = 2\n").is_err());
        assert!(Manifest::parse("[optim]\n").is_err());
        assert!(Manifest::parse("[train]\nlr = fast\n").is_err());
        assert!(Manifest::parse("[train]\nlr = 0.1\nlr = 0.2\n").is_err());
        assert!(Manifest::parse("[train]\nlr = 0\n").is_err());
        assert!(Manifest::parse("[model]\nlevels = 3\n").is_err());
    }
}
