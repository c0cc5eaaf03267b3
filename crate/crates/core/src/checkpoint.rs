//! Parameter checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic  "MVIRPARM"
//! u32    version (1)
//! u64    config fingerprint
//! u32    parameter count
//! per parameter: u16 name length, UTF-8 name, u8 rank, u32 per dimension
//! f64    payload, every parameter in table order
//! ```

use std::path::Path;

use crate::autodiff::Tensor;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::MvirModel;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MVIRPARM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Upper bound on elements a single decoded tensor may hold.
const MAX_ELEMENTS: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a parameter checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated at byte {offset}: needed {needed} bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("malformed shape table at byte {offset}: {detail}")]
    Table { offset: usize, detail: String },
    #[error("{extra} trailing bytes after payload")]
    Trailing { extra: usize },
    #[error(
        "checkpoint fingerprint {found:016x} does not match config fingerprint {expected:016x}"
    )]
    Fingerprint { expected: u64, found: u64 },
    #[error("checkpoint parameter table does not match config: {0}")]
    Shape(String),
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: u64,
    pub params: Vec<(String, Tensor)>,
}

pub fn encode_checkpoint(fingerprint: u64, params: &[(String, Tensor)]) -> Vec<u8> {
    let payload: usize = params.iter().map(|(_, t)| t.numel() * 8).sum();
    let mut out = Vec::with_capacity(24 + payload);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&fingerprint.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &dim in t.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
    }
    for (_, t) in params {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).map_err(|_| CheckpointError::BadMagic)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let fingerprint = u64::from_le_bytes(r.array()?);
    let count = u32::from_le_bytes(r.array()?) as usize;

    let mut table = Vec::with_capacity(count.min(1024));
    let mut total: usize = 0;
    for _ in 0..count {
        let at = r.pos;
        let len = u16::from_le_bytes(r.array()?) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Table {
                offset: at,
                detail: "name is not UTF-8".into(),
            })?
            .to_owned();
        let rank = r.array::<1>()?[0] as usize;
        if rank == 0 {
            return Err(CheckpointError::Table {
                offset: at,
                detail: format!("{name}: rank 0"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let dim = u32::from_le_bytes(r.array()?);
            if dim == 0 {
                return Err(CheckpointError::Table {
                    offset: at,
                    detail: format!("{name}: zero-sized axis"),
                });
            }
            numel = numel.saturating_mul(dim as u64);
            shape.push(dim as usize);
        }
        if numel > MAX_ELEMENTS {
            return Err(CheckpointError::Table {
                offset: at,
                detail: format!("{name}: {numel} elements"),
            });
        }
        total = total.saturating_add(numel as usize);
        table.push((name, shape, numel as usize));
    }

    let needed = total.saturating_mul(8);
    let available = bytes.len() - r.pos;
    if needed > available {
        return Err(CheckpointError::Truncated {
            offset: r.pos,
            needed,
            available,
        });
    }
    let mut params = Vec::with_capacity(table.len());
    for (name, shape, numel) in table {
        let data = r
            .take(numel * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let t = Tensor::new(shape, data).expect("shape and payload agree");
        params.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Trailing {
            extra: bytes.len() - r.pos,
        });
    }
    Ok(Checkpoint {
        fingerprint,
        params,
    })
}

/// Serializes a model's parameters under its config fingerprint.
pub fn model_bytes(model: &MvirModel) -> Vec<u8> {
    let params: Vec<(String, Tensor)> = model
        .store
        .iter()
        .map(|(n, t)| (n.to_owned(), t.clone()))
        .collect();
    encode_checkpoint(model.config.fingerprint(), &params)
}

/// Rebuilds a model for `config` from checkpoint bytes.
pub fn model_from_bytes(config: ModelConfig, bytes: &[u8]) -> Result<MvirModel> {
    let ckpt = decode_checkpoint(bytes)?;
    let expected = config.fingerprint();
    if ckpt.fingerprint != expected {
        return Err(CheckpointError::Fingerprint {
            expected,
            found: ckpt.fingerprint,
        }
        .into());
    }
    let mut model = MvirModel::new(config, 0)?;
    if ckpt.params.len() != model.store.len() {
        return Err(CheckpointError::Shape(format!(
            "{} parameters in file, {} expected",
            ckpt.params.len(),
            model.store.len()
        ))
        .into());
    }
    let names = model.store.names().to_vec();
    for ((name, tensor), (want_name, slot)) in ckpt
        .params
        .into_iter()
        .zip(names.iter().zip(model.store.tensors_mut()))
    {
        if &name != want_name || tensor.shape() != slot.shape() {
            return Err(CheckpointError::Shape(format!(
                "file has {name} {:?} where config expects {want_name} {:?}",
                tensor.shape(),
                slot.shape()
            ))
            .into());
        }
        slot.data_mut().copy_from_slice(tensor.data());
    }
    Ok(model)
}

pub fn save_params(model: &MvirModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_params(config: ModelConfig, path: impl AsRef<Path>) -> Result<MvirModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(config, &bytes)
}
