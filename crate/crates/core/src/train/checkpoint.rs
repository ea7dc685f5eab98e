//! Single-file checkpoints: an 8-byte little-endian header length, a JSON
//! header, then the little-endian f32 payload of every tensor back to back.
//! Tensor entries are named `param/<name>`, `adam.m/<name>` and
//! `adam.v/<name>`, each with its byte offset into the payload.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{AdamW, AdamWConfig, PlateauScheduler};
use crate::error::{io_err, Error, Result};
use crate::net::ParamStore;
use crate::tensor::{DType, Scalar, Tensor, TensorError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointKind {
    Network,
    Velocity,
}

/// One epoch of training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: u8,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Image metrics; absent for velocity fields.
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    /// Epochs completed.
    pub epoch: usize,
    pub config: serde_json::Value,
    pub params: ParamStore<f32>,
    pub optimizer: Option<AdamW>,
    pub scheduler: Option<PlateauScheduler>,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerHeader {
    cfg: AdamWConfig,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: CheckpointKind,
    epoch: usize,
    config: serde_json::Value,
    optimizer: Option<OptimizerHeader>,
    scheduler: Option<PlateauScheduler>,
    history: Vec<EpochRecord>,
    tensors: Vec<TensorEntry>,
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Tensor(TensorError::Format(detail.into()))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut payload = Vec::new();
        let mut push = |name: String, t: &Tensor<f32>| {
            entries.push(TensorEntry {
                name,
                dtype: DType::F32,
                shape: t.shape().to_vec(),
                offset: payload.len(),
            });
            for &v in t.data() {
                v.write_le(&mut payload);
            }
        };
        for (name, t) in self.params.iter() {
            push(format!("param/{name}"), t);
        }
        if let Some(opt) = &self.optimizer {
            for (name, t) in &opt.m {
                push(format!("adam.m/{name}"), t);
            }
            for (name, t) in &opt.v {
                push(format!("adam.v/{name}"), t);
            }
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            kind: self.kind,
            epoch: self.epoch,
            config: self.config.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader { cfg: o.cfg, step: o.step }),
            scheduler: self.scheduler,
            history: self.history.clone(),
            tensors: entries,
        };
        let header = serde_json::to_vec(&header).map_err(|e| format_err(e.to_string()))?;
        let mut out = Vec::with_capacity(8 + header.len() + payload.len());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(format_err("checkpoint truncated"));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(8..8 + hlen).ok_or_else(|| format_err("checkpoint header truncated"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| format_err(e.to_string()))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(format_err(format!("unsupported checkpoint version {}", header.version)));
        }
        let payload = &bytes[8 + hlen..];
        let mut params = ParamStore::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for e in header.tensors {
            if e.dtype != DType::F32 {
                return Err(format_err(format!("{}: only f32 tensors are stored", e.name)));
            }
            let n: usize = e.shape.iter().product();
            let raw = payload
                .get(e.offset..e.offset + 4 * n)
                .ok_or_else(|| format_err(format!("{}: payload truncated", e.name)))?;
            let t = Tensor::new(e.shape, raw.chunks_exact(4).map(f32::read_le).collect())?;
            let (kind, name) = e.name.split_once('/').ok_or_else(|| format_err(format!("bad entry {}", e.name)))?;
            match kind {
                "param" => params.insert(name, t),
                "adam.m" => {
                    m.insert(name.to_string(), t);
                }
                "adam.v" => {
                    v.insert(name.to_string(), t);
                }
                _ => return Err(format_err(format!("bad entry {}", e.name))),
            }
        }
        let optimizer = header.optimizer.map(|o| AdamW { cfg: o.cfg, step: o.step, m, v });
        Ok(Self {
            kind: header.kind,
            epoch: header.epoch,
            config: header.config,
            params,
            optimizer,
            scheduler: header.scheduler,
            history: header.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(io_err(path))?)
    }

    /// The stored config decoded as `C`.
    pub fn config_as<C: serde::de::DeserializeOwned>(&self) -> Result<C> {
        serde_json::from_value(self.config.clone()).map_err(|e| Error::Config(e.to_string()))
    }
}
