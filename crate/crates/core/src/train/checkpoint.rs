//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "UHKT"  u32 version  u32 config_len  config (UTF-8)  u64 step  u32 n_tensors
//! n_tensors x { u32 name_len  name  u32 rank  rank x u32 extent  f32 payload }
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! Optimizer moments, when present, are stored as `optim.m/<param>` and
//! `optim.v/<param>` after the parameters.

use std::path::Path;

use super::adam::{Adam, AdamConfig};
use crate::autodiff::HasParams;
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::model::HybridUNet;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"UHKT";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub step: u64,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!(
                "truncated: {what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let at = self.pos;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} at offset {at} is not UTF-8")))
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        push_u32(&mut out, self.config.len());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        push_u32(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            push_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            let dims = t.shape().dims();
            push_u32(&mut out, dims.len());
            for d in dims {
                push_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("version mismatch: file is v{version}, reader supports v{VERSION}")));
        }
        let config = r.string("config text")?;
        let step = r.u64("step")?;
        let n = r.u32("tensor count")? as usize;
        let mut tensors = Vec::new();
        for i in 0..n {
            let name = r.string(&format!("tensor {i} name"))?;
            let rank = r.u32(&format!("rank of `{name}`"))? as usize;
            if rank != 4 {
                if rank > MAX_RANK {
                    return Err(Error::Checkpoint(format!("tensor `{name}` has implausible rank {rank}")));
                }
                return Err(Error::Checkpoint(format!("tensor `{name}` has rank {rank}, expected 4")));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32(&format!("extents of `{name}`"))? as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3])
                .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
            let bytes_needed = shape
                .numel()
                .checked_mul(4)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` extents overflow")))?;
            let payload = r.take(bytes_needed, &format!("payload of `{name}`"))?;
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push((name, Tensor::from_vec(shape, data)?));
        }
        let body_end = r.pos;
        let stored = r.u32("checksum")?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} unexpected trailing bytes", bytes.len() - r.pos)));
        }
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        Ok(Self { config, step, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Snapshot of `model` and, optionally, its optimizer. The step is the
    /// optimizer's step count, or 0 without one.
    pub fn capture(config: &str, model: &HybridUNet<f32>, adam: Option<&Adam<f32>>) -> Self {
        let params = model.params();
        let mut tensors: Vec<(String, Tensor<f32>)> =
            params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        if let Some(adam) = adam {
            for (p, m) in params.iter().zip(&adam.m) {
                tensors.push((format!("optim.m/{}", p.name), m.clone()));
            }
            for (p, v) in params.iter().zip(&adam.v) {
                tensors.push((format!("optim.v/{}", p.name), v.clone()));
            }
        }
        Self { config: config.to_string(), step: adam.map_or(0, |a| a.t), tensors }
    }

    fn find(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies stored parameters into `model`, which must have exactly the same
    /// tensor names and shapes. Returns the optimizer state when stored.
    pub fn restore(&self, model: &mut HybridUNet<f32>, adam_cfg: AdamConfig) -> Result<Option<Adam<f32>>> {
        let is_optim = |n: &str| n.starts_with("optim.m/") || n.starts_with("optim.v/");
        for (name, _) in self.tensors.iter().filter(|(n, _)| !is_optim(n)) {
            if model.params().id(name).is_none() {
                return Err(Error::Checkpoint(format!("tensor `{name}` does not exist in the configured model")));
            }
        }
        let store = model.params();
        for p in store.iter() {
            let t = self
                .find(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` missing from checkpoint", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {} in checkpoint but {} in the configured model",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
        }
        let has_optim = self.tensors.iter().any(|(n, _)| is_optim(n));
        let adam = if has_optim {
            let mut adam = Adam::new(adam_cfg, store);
            for (i, p) in store.iter().enumerate() {
                for (prefix, slot) in [("optim.m/", &mut adam.m[i]), ("optim.v/", &mut adam.v[i])] {
                    let name = format!("{prefix}{}", p.name);
                    let t = self
                        .find(&name)
                        .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` missing from checkpoint")))?;
                    if t.shape() != p.value.shape() {
                        return Err(Error::Checkpoint(format!("tensor `{name}` has shape {}", t.shape())));
                    }
                    *slot = t.clone();
                }
            }
            adam.t = self.step;
            Some(adam)
        } else {
            None
        };
        for p in model.params_mut().iter_mut() {
            p.value = self.find(&p.name).expect("checked above").clone();
        }
        Ok(adam)
    }
}

/// A model rebuilt from a checkpoint's embedded manifest.
#[derive(Debug, Clone)]
pub struct LoadedCheckpoint {
    pub manifest: Manifest,
    pub model: HybridUNet<f32>,
    pub adam: Option<Adam<f32>>,
    pub step: u64,
}

/// Writes `model` with the resolved `manifest` as the config text.
pub fn save_checkpoint(
    path: &Path,
    manifest: &Manifest,
    model: &HybridUNet<f32>,
    adam: Option<&Adam<f32>>,
) -> Result<()> {
    Checkpoint::capture(&manifest.to_string(), model, adam).write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let ckpt = Checkpoint::read(path)?;
    let manifest = Manifest::parse(&ckpt.config)?;
    let mut model = HybridUNet::build(&manifest.model, 0)?;
    let adam = ckpt.restore(&mut model, manifest.train.adam())?;
    Ok(LoadedCheckpoint { manifest, model, adam, step: ckpt.step })
}
