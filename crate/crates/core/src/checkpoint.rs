//! Binary checkpoint files.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "DSNC" | version | entry count | entries...
//! entry = name length | UTF-8 name | 4 dims | f32 LE payload
//! ```
//!
//! A model checkpoint stores its architecture in `meta.arch`
//! (`kind, in_ch, base_ch`) and `meta.heads` (head placement codes), every
//! parameter under its own name, and optionally the optimizer step in
//! `optim.step` plus one `optim.velocity:<param>` entry per parameter.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{HeadPlacement, Model, ModelKind, Network};
use crate::optim::SgdState;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"DSNC";
pub const VERSION: u32 = 1;

const ARCH: &str = "meta.arch";
const HEADS: &str = "meta.heads";
const STEP: &str = "optim.step";
const VELOCITY_PREFIX: &str = "optim.velocity:";
/// Largest step count an f32 payload holds exactly.
const MAX_STEP: u64 = 1 << 24;

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

pub fn write_entries<W: Write>(w: &mut W, entries: &[(String, &Tensor<f32>)]) -> Result<()> {
    w.write_all(&MAGIC)?;
    write_u32(w, VERSION)?;
    write_u32(w, to_u32(entries.len(), "entry count")?)?;
    for (name, t) in entries {
        write_u32(w, to_u32(name.len(), "name length")?)?;
        w.write_all(name.as_bytes())?;
        for d in t.shape().dims() {
            write_u32(w, to_u32(d, "dimension")?)?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_entries<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("missing magic, expected \"DSNC\"".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"DSNC\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let count = read_u32(r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Format(format!("truncated entry name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = read_u32(r)? as usize;
        }
        let shape = Shape::from(dims);
        shape
            .validate()
            .map_err(|_| Error::Format(format!("entry {name} has a zero dimension")))?;
        let mut raw = vec![0u8; shape.numel() * 4];
        r.read_exact(&mut raw)
            .map_err(|e| Error::Format(format!("truncated payload for {name}: {e}")))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::from_vec(shape, values)?));
    }
    Ok(out)
}

/// Optimizer progress stored alongside a model.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub velocities: Vec<Tensor<f32>>,
}

impl OptimizerSnapshot {
    pub fn restore_into(self, state: &mut SgdState) -> Result<()> {
        if self.velocities.len() != state.velocities.len() {
            return Err(Error::Format("velocity count does not match the model".into()));
        }
        for (have, want) in self.velocities.iter().zip(&state.velocities) {
            if have.shape() != want.shape() {
                return Err(Error::Format("velocity shape does not match the model".into()));
            }
        }
        state.velocities = self.velocities;
        state.step = self.step;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<OptimizerSnapshot>,
}

fn meta_tensor(values: &[u32]) -> Result<Tensor<f32>> {
    Tensor::from_vec([1, 1, 1, values.len()], values.iter().map(|&v| v as f32).collect())
}

pub fn save(path: &Path, model: &Model, optimizer: Option<&SgdState>) -> Result<()> {
    let net = &model.net;
    let arch = meta_tensor(&[net.kind.code(), to_u32(net.in_ch, "in_ch")?, to_u32(net.base_ch, "base_ch")?])?;
    let codes = net.placement_codes();
    let heads = if codes.is_empty() {
        None
    } else {
        Some(meta_tensor(&codes)?)
    };
    let step_t;
    let mut entries: Vec<(String, &Tensor<f32>)> = vec![(ARCH.into(), &arch)];
    if let Some(h) = &heads {
        entries.push((HEADS.into(), h));
    }
    for p in model.params.iter() {
        entries.push((p.name.clone(), &p.value));
    }
    if let Some(opt) = optimizer {
        if opt.step >= MAX_STEP {
            return Err(Error::Format(format!("step {} too large to store", opt.step)));
        }
        if opt.velocities.len() != model.params.len() {
            return Err(Error::contract("optimizer does not match model"));
        }
        step_t = Tensor::scalar(opt.step as f32);
        entries.push((STEP.into(), &step_t));
        for (p, v) in model.params.iter().zip(&opt.velocities) {
            entries.push((format!("{VELOCITY_PREFIX}{}", p.name), v));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_entries(&mut w, &entries)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let entries = read_entries(&mut r)?;
    from_entries(entries)
}

fn meta_values(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|&v| v as u32).collect()
}

pub fn from_entries(entries: Vec<(String, Tensor<f32>)>) -> Result<Checkpoint> {
    let find = |name: &str| entries.iter().find(|(n, _)| n == name).map(|(_, t)| t);
    let arch = find(ARCH).ok_or_else(|| Error::Format("checkpoint has no meta.arch entry".into()))?;
    let arch = meta_values(arch);
    if arch.len() != 3 {
        return Err(Error::Format("meta.arch must hold 3 values".into()));
    }
    let kind = ModelKind::from_code(arch[0])
        .ok_or_else(|| Error::Format(format!("unknown model kind code {}", arch[0])))?;
    let placement = match find(HEADS) {
        Some(t) => Network::placement_from_codes(&meta_values(t))?,
        None => HeadPlacement { stages: vec![] },
    };
    let mut model = Model::with_placement(kind, arch[1] as usize, arch[2] as usize, &placement, 0)?;
    for id in model.params.ids().collect::<Vec<_>>() {
        let p = model.params.get_mut(id);
        let t = find(&p.name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing parameter {}", p.name)))?;
        if t.shape() != p.value.shape() {
            return Err(Error::Format(format!(
                "parameter {} has shape {}, model expects {}",
                p.name,
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t.clone();
    }
    let optimizer = match find(STEP) {
        None => None,
        Some(step) => {
            let step = step.item()? as u64;
            let velocities = model
                .params
                .iter()
                .map(|p| {
                    find(&format!("{VELOCITY_PREFIX}{}", p.name))
                        .cloned()
                        .ok_or_else(|| Error::Format(format!("missing velocity for {}", p.name)))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(OptimizerSnapshot { step, velocities })
        }
    };
    Ok(Checkpoint { model, optimizer })
}
