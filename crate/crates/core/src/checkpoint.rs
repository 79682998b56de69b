//! Binary checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! b"DUIP"                      magic
//! u32                          format version (1)
//! u32 + UTF-8 JSON             header: {"train": TrainConfig, "epoch": n, "adam_step": t}
//! u32                          tensor count
//! per tensor:
//!   u16 + UTF-8                name
//!   u8                         rank
//!   u32 × rank                 dims
//!   f32 × Π dims               payload, row-major
//! u32 + UTF-8 JSON             item vocabulary
//! ```
//!
//! Parameters are named as in [`DuipParams::tensors`]; Adam moments follow as
//! `adam.m.<name>` and `adam.v.<name>`. Weights are stored as `f32`, so a
//! checkpoint rounds its tensors to `f32` precision when it is captured;
//! save/load is then exact.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ItemVocab;
use crate::error::{Error, Result};
use crate::model::{DuipModel, DuipParams};
use crate::optim::Adam;
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 4] = b"DUIP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: DuipModel,
    pub adam: Adam,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    train: TrainConfig,
    epoch: usize,
    adam_step: u64,
}

fn round_to_f32(params: &mut DuipParams) {
    for (_, t) in params.tensors_mut() {
        for x in t.data_mut() {
            *x = *x as f32 as f64;
        }
    }
}

impl Checkpoint {
    /// Snapshot of a training state, rounded to storage precision.
    pub fn capture(config: &TrainConfig, model: &DuipModel, adam: &Adam, epoch: usize) -> Self {
        let mut model = model.clone();
        let mut adam = adam.clone();
        round_to_f32(&mut model.params);
        round_to_f32(&mut adam.m);
        round_to_f32(&mut adam.v);
        Checkpoint {
            config: config.clone(),
            model,
            adam,
            epoch,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header {
            train: self.config.clone(),
            epoch: self.epoch,
            adam_step: self.adam.step,
        })
        .expect("header serializes");
        put_blob(&mut out, &header);

        let mut tensors: Vec<(String, &Tensor)> = self.model.params.tensors();
        tensors.extend(
            self.adam
                .m
                .tensors()
                .into_iter()
                .map(|(n, t)| (format!("adam.m.{n}"), t)),
        );
        tensors.extend(
            self.adam
                .v
                .tensors()
                .into_iter()
                .map(|(n, t)| (format!("adam.v.{n}"), t)),
        );
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let vocab = serde_json::to_vec(&self.model.vocab).expect("vocab serializes");
        put_blob(&mut out, &vocab);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(r.error_at(0, "bad magic (not a checkpoint)"));
        }
        let version_at = r.pos;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(r.error_at(version_at, format!("unsupported format version {version}")));
        }
        let header_at = r.pos;
        let header: Header =
            serde_json::from_slice(r.blob()?).map_err(|e| r.error_at(header_at, format!("bad header JSON: {e}")))?;

        let count = r.u32()? as usize;
        let mut tensors: HashMap<String, Tensor> = HashMap::with_capacity(count);
        for _ in 0..count {
            let name_at = r.pos;
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| r.error_at(name_at, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let payload_at = r.pos;
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| r.error_at(payload_at, "tensor too large"))?,
            )?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let t = Tensor::from_vec(&shape, data).map_err(|e| r.error_at(name_at, e.to_string()))?;
            tensors.insert(name, t);
        }
        let vocab_at = r.pos;
        let vocab: ItemVocab =
            serde_json::from_slice(r.blob()?).map_err(|e| r.error_at(vocab_at, format!("bad vocabulary JSON: {e}")))?;
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, "trailing bytes after vocabulary"));
        }

        let config = header.train;
        let mut model =
            DuipModel::new(config.model.clone(), vocab, &mut crate::rng::Rng::new(0)).map_err(|e| Error::Format {
                offset: header_at,
                message: e.to_string(),
            })?;
        let mut adam = Adam::new(
            &model.params,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.adam_eps,
        );
        adam.step = header.adam_step;
        fill(&mut model.params, "", &mut tensors)?;
        fill(&mut adam.m, "adam.m.", &mut tensors)?;
        fill(&mut adam.v, "adam.v.", &mut tensors)?;
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Format {
                offset: vocab_at,
                message: format!("unexpected tensor `{extra}`"),
            });
        }
        Ok(Checkpoint {
            config,
            model,
            adam,
            epoch: header.epoch,
        })
    }
}

fn fill(params: &mut DuipParams, prefix: &str, tensors: &mut HashMap<String, Tensor>) -> Result<()> {
    for (name, slot) in params.tensors_mut() {
        let key = format!("{prefix}{name}");
        let t = tensors.remove(&key).ok_or_else(|| Error::Format {
            offset: 0,
            message: format!("missing tensor `{key}`"),
        })?;
        if t.shape() != slot.shape() {
            return Err(Error::Format {
                offset: 0,
                message: format!("tensor `{key}` has shape {:?}, expected {:?}", t.shape(), slot.shape()),
            });
        }
        *slot = t;
    }
    Ok(())
}

fn put_blob(out: &mut Vec<u8>, blob: &[u8]) {
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(blob);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.error_at(
                self.pos,
                format!("truncated: needed {n} bytes, {} left", self.bytes.len() - self.pos),
            )),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
