//! Binary checkpoints.
//!
//! ```text
//! magic      8 bytes  "GAITGCN\0"
//! version    u32
//! width      u8       bytes per value (4 = f32, 8 = f64)
//! config     u32 length + JSON bytes
//! step       u64
//! count      u32
//! count × { name: u32 length + UTF-8 bytes, rank: u32, dims: rank × u32, values }
//! ```
//!
//! All integers and values are little-endian. Tensor records hold the
//! network parameters, then the batch-norm running statistics, then the
//! optimizer moments (`adam.m.<param>`, `adam.v.<param>`).

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::net::{build_network, NetworkConfig, StgcnNetwork};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 8] = b"GAITGCN\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Real> {
    pub config: CheckpointConfig,
    pub step: u64,
    pub tensors: Vec<(String, Tensor<T>)>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<T: Real> Checkpoint<T> {
    /// Snapshots a network and, if given, its optimizer state.
    pub fn capture(
        model: &StgcnNetwork<T>,
        optimizer: Option<&AdamState<T>>,
        train: Option<&TrainConfig>,
        step: u64,
    ) -> Self {
        let params = model.named_params();
        let mut tensors: Vec<(String, Tensor<T>)> = params
            .iter()
            .map(|(n, t)| (n.clone(), (*t).clone()))
            .collect();
        tensors.extend(model.named_buffers().into_iter().map(|(n, t)| (n, t.clone())));
        if let Some(opt) = optimizer {
            for ((name, _), m) in params.iter().zip(&opt.m) {
                tensors.push((format!("adam.m.{name}"), m.clone()));
            }
            for ((name, _), v) in params.iter().zip(&opt.v) {
                tensors.push((format!("adam.v.{name}"), v.clone()));
            }
        }
        Self {
            config: CheckpointConfig {
                network: model.config().clone(),
                train: train.cloned(),
            },
            step,
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(T::BYTES as u8);
        let config = serde_json::to_vec(&self.config).expect("config is serializable");
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// Decodes a checkpoint. Values stored at a different width are
    /// converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(corrupt(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let width = r.take(1)?[0] as usize;
        if width != 4 && width != 8 {
            return Err(corrupt(format!("unsupported value width {width}")));
        }
        let config_len = r.u32()? as usize;
        let config: CheckpointConfig = serde_json::from_slice(r.take(config_len)?)
            .map_err(|e| corrupt(format!("bad config record: {e}")))?;
        let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| corrupt("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(width).ok_or_else(|| corrupt("tensor too large"))?)?;
            let data: Vec<T> = raw
                .chunks_exact(width)
                .map(|c| match width {
                    4 => T::from_f64(f32::read_le(c) as f64),
                    _ => T::from_f64(f64::read_le(c)),
                })
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| corrupt(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(corrupt(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            config,
            step,
            tensors,
        })
    }

    /// Copies parameters and running statistics into `model`, which must
    /// have exactly the checkpoint's tensor names and shapes.
    pub fn restore_into(&self, model: &mut StgcnNetwork<T>) -> Result<()> {
        let names: Vec<String> = model
            .named_params()
            .into_iter()
            .chain(model.named_buffers())
            .map(|(n, t)| {
                let stored = self
                    .tensor(&n)
                    .ok_or_else(|| corrupt(format!("tensor `{n}` is missing from the checkpoint")))?;
                if stored.shape() != t.shape() {
                    return Err(corrupt(format!(
                        "tensor `{n}` has shape {:?} in the checkpoint but {:?} in the model",
                        stored.shape(),
                        t.shape()
                    )));
                }
                Ok(n)
            })
            .collect::<Result<_>>()?;
        if let Some((extra, _)) = self
            .tensors
            .iter()
            .find(|(n, _)| !n.starts_with("adam.") && !names.contains(n))
        {
            return Err(corrupt(format!(
                "checkpoint tensor `{extra}` does not exist in the model"
            )));
        }
        let mut names = names.iter();
        for target in model.params_mut() {
            *target = self.tensor(names.next().expect("one name per tensor")).expect("checked above").clone();
        }
        for target in model.buffers_mut() {
            *target = self.tensor(names.next().expect("one name per tensor")).expect("checked above").clone();
        }
        Ok(())
    }

    /// Rebuilds the network described by the stored config.
    pub fn network(&self) -> Result<StgcnNetwork<T>> {
        self.network_with(&self.config.network)
    }

    /// Builds a network from `config` and fills it from this checkpoint.
    pub fn network_with(&self, config: &NetworkConfig) -> Result<StgcnNetwork<T>> {
        let mut model = build_network(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        self.restore_into(&mut model)?;
        Ok(model)
    }

    /// Optimizer moments for `model`'s parameters, if they were saved.
    pub fn optimizer(&self, model: &StgcnNetwork<T>) -> Result<Option<AdamState<T>>> {
        let params = model.named_params();
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for (name, p) in &params {
            let (Some(mt), Some(vt)) = (
                self.tensor(&format!("adam.m.{name}")),
                self.tensor(&format!("adam.v.{name}")),
            ) else {
                return Ok(None);
            };
            if mt.shape() != p.shape() || vt.shape() != p.shape() {
                return Err(corrupt(format!("optimizer state for `{name}` has the wrong shape")));
            }
            m.push(mt.clone());
            v.push(vt.clone());
        }
        Ok(Some(AdamState {
            step: self.step,
            m,
            v,
        }))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("file is truncated at byte {}", self.bytes.len())))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Writes through a temporary file so a crash never leaves a partial
/// checkpoint at `path`.
pub fn save_checkpoint<T: Real>(checkpoint: &Checkpoint<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, checkpoint.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
