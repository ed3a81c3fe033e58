//! Binary checkpoints.
//!
//! Layout (little endian): the magic bytes, a `u32` format version, a
//! `u64`-length-prefixed JSON header (training config, schema, training
//! vocabulary), a `u32` tensor count, then per tensor a `u32`-prefixed UTF-8
//! name, a `u32` rank, `u64` dims and the `f64` values. A CRC-32 of all
//! preceding bytes closes the file.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::autodiff::{ParamStore, Tensor};
use crate::data::Schema;
use crate::error::{Error, Result};
use crate::tagger::Model;

pub const MAGIC: &[u8; 8] = b"OOVTAGCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub schema: Schema,
    pub store: ParamStore,
    /// Sorted training-corpus forms, needed to define the OOV split.
    pub train_vocab: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    schema: Schema,
    train_vocab: Vec<String>,
}

impl Checkpoint {
    /// Rebuilds the model, checking that every stored tensor matches the
    /// layout the config and schema imply.
    pub fn model(&self) -> Result<Model> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(self.config.model, self.schema.clone(), &mut rng)?;
        if model.store.len() != self.store.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} tensors stored, model has {}",
                self.store.len(),
                model.store.len()
            )));
        }
        for id in model.store.ids().collect::<Vec<_>>() {
            let name = model.store.name(id).to_string();
            let src = self
                .store
                .find(&name)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {name}")))?;
            let src = self.store.get(src);
            let dst = model.store.get_mut(id);
            if src.shape() != dst.shape() {
                return Err(Error::CorruptCheckpoint(format!(
                    "{name}: stored shape {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.values_mut().copy_from_slice(src.values());
        }
        Ok(model)
    }

    pub fn from_model(model: &Model, config: &TrainConfig, train_vocab: Vec<String>) -> Self {
        Checkpoint {
            config: config.clone(),
            schema: model.schema.clone(),
            store: model.store.clone(),
            train_vocab,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            schema: self.schema.clone(),
            train_vocab: self.train_vocab.clone(),
        })?;
        let mut out = Vec::with_capacity(8 * self.store.num_scalars() + header.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for id in self.store.ids() {
            let name = self.store.name(id).as_bytes();
            let t = self.store.get(id);
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 4 + 4 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }

        let mut r = Reader { buf: body, pos: 12 };
        let header_len = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| corrupt("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| corrupt("tensor size overflows"))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| corrupt("tensor size overflows"))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, values).map_err(|e| Error::CorruptCheckpoint(format!("{name}: {e}")))?;
            store.add(name, t);
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after the last tensor"));
        }
        Ok(Checkpoint {
            config: header.config,
            schema: header.schema,
            store,
            train_vocab: header.train_vocab,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptCheckpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
