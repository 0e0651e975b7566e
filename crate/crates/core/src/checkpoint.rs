//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `HOICKPT1`, a little-endian `u32` header length,
//! a JSON header, then every tensor's elements as little-endian floats in
//! header order. Values are stored at the model's own precision, so a
//! round trip is bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::AdamW;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::train::Trainer;

pub const MAGIC: &[u8; 8] = b"HOICKPT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Slot {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    slot: Slot,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    scalar_bytes: usize,
    step: usize,
    optimizer_step: u64,
    config: RunConfig,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to resume training or run inference.
pub struct Checkpoint<T: Scalar> {
    pub config: RunConfig,
    pub step: usize,
    pub model: Model<T>,
    pub optimizer: AdamW<T>,
}

fn put<T: Scalar>(out: &mut Vec<u8>, a: &ArrayD<T>) {
    for &v in a.iter() {
        v.write_le(out);
    }
}

fn take<T: Scalar>(data: &[u8], pos: &mut usize, shape: &[usize]) -> Result<ArrayD<T>> {
    let n: usize = shape.iter().product();
    let end = *pos + n * T::BYTES;
    let bytes = data
        .get(*pos..end)
        .ok_or_else(|| Error::Checkpoint("truncated tensor data".into()))?;
    *pos = end;
    let vals: Vec<T> = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
    Ok(ArrayD::from_shape_vec(IxDyn(shape), vals).expect("length matches shape"))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_trainer(trainer: &Trainer<T>, config: &RunConfig) -> Self {
        Checkpoint {
            config: config.clone(),
            step: trainer.step,
            model: trainer.model.clone(),
            optimizer: trainer.optimizer.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut data = Vec::new();
        for (_, e) in self.model.params.iter() {
            tensors.push(TensorEntry {
                name: e.name.clone(),
                slot: if e.trainable { Slot::Param } else { Slot::Buffer },
                shape: e.value.shape().to_vec(),
            });
            put(&mut data, &e.value);
        }
        for (slot, moments) in [(Slot::AdamM, &self.optimizer.m), (Slot::AdamV, &self.optimizer.v)] {
            for ((_, e), a) in self.model.params.iter().zip(moments) {
                tensors.push(TensorEntry {
                    name: e.name.clone(),
                    slot,
                    shape: a.shape().to_vec(),
                });
                put(&mut data, a);
            }
        }
        let header = Header {
            scalar_bytes: T::BYTES,
            step: self.step,
            optimizer_step: self.optimizer.step,
            config: self.config.clone(),
            tensors,
        };
        let h = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + h.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(h.len() as u32).to_le_bytes());
        out.extend_from_slice(&h);
        out.extend_from_slice(&data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let hbytes = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(hbytes)?;
        if header.scalar_bytes != T::BYTES {
            return Err(Error::Checkpoint(format!(
                "checkpoint stores {}-byte floats, requested {}-byte",
                header.scalar_bytes,
                T::BYTES
            )));
        }
        let data = &bytes[12 + hlen..];
        let mut pos = 0;
        let mut params = ParamStore::<T>::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for t in &header.tensors {
            let a = take::<T>(data, &mut pos, &t.shape)?;
            match t.slot {
                Slot::Param => {
                    params.add(t.name.clone(), a);
                }
                Slot::Buffer => {
                    params.add_buffer(t.name.clone(), a);
                }
                Slot::AdamM => m.push(a),
                Slot::AdamV => v.push(a),
            }
        }
        if pos != data.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", data.len() - pos)));
        }
        let cfg = header.config;
        let model = Model::with_params(&cfg.model, &cfg.scene.vocab, &params)?;
        // moments follow the stored parameter order; remap to the model's
        let mut optimizer = AdamW::new(cfg.train.optimizer, &model.params)?;
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        for (i, (_, e)) in params.iter().enumerate() {
            let id = model.params.id(&e.name).expect("checked by with_params");
            let j = model.params.iter().position(|(k, _)| k == id).unwrap();
            if m[i].shape() != e.value.shape() || v[i].shape() != e.value.shape() {
                return Err(Error::Checkpoint(format!("optimizer state shape for `{}`", e.name)));
            }
            optimizer.m[j] = m[i].clone();
            optimizer.v[j] = v[i].clone();
        }
        optimizer.step = header.optimizer_step;
        Ok(Checkpoint {
            config: cfg,
            step: header.step,
            model,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Turn back into a trainer that continues where this one stopped.
    pub fn into_trainer(self) -> Result<Trainer<T>> {
        let mut t = Trainer::new(
            self.model,
            self.config.train.clone(),
            self.config.loss,
            self.config.seed,
        )?;
        t.optimizer = self.optimizer;
        t.step = self.step;
        Ok(t)
    }
}

/// Scalar width stored in a checkpoint file, read from its header only.
pub fn stored_scalar_bytes(path: &Path) -> Result<usize> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    #[derive(Deserialize)]
    struct Probe {
        scalar_bytes: usize,
    }
    let p: Probe = serde_json::from_slice(
        bytes
            .get(12..12 + hlen)
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?,
    )?;
    Ok(p.scalar_bytes)
}
