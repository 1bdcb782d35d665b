//! Binary checkpoint format.
//!
//! ```text
//! "MTPC" | u32 version | u32 len + config text | u32 tensor count
//!   | per tensor: u32 len + name, u32 rank, u64 dims…, u8 dtype (0 = f64), f64 LE payload
//! | u32 CRC32 of everything before it
//! ```
//! All integers are little-endian. The config text is canonical sorted
//! `key=value` lines: the run configuration plus `state.*` entries.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{MtpError, Result};
use crate::model::MultiTokenModel;
use crate::rng;
use crate::training::{AdamState, Trainer};

pub const MAGIC: &[u8; 4] = b"MTPC";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub tensors: Vec<NamedTensor>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| MtpError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| MtpError::Format(format!("dimension {v} too large")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| MtpError::Format("string is not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION as usize);
        put_u32(&mut out, self.config_text.len());
        out.extend_from_slice(self.config_text.as_bytes());
        put_u32(&mut out, self.tensors.len());
        for t in &self.tensors {
            put_u32(&mut out, t.name.len());
            out.extend_from_slice(t.name.as_bytes());
            put_u32(&mut out, t.dims.len());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.push(DTYPE_F64);
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(MtpError::Format("not a checkpoint (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(MtpError::Format(format!(
                "checksum mismatch (stored {stored:08x}, computed {actual:08x})"
            )));
        }
        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(MtpError::Format(format!(
                "unsupported checkpoint format version {version} (this build reads version {FORMAT_VERSION})"
            )));
        }
        let config_text = r.string()?;
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()?;
            let dims: Vec<usize> = (0..rank).map(|_| r.u64()).collect::<Result<_>>()?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F64 {
                return Err(MtpError::Format(format!("tensor {name}: unknown dtype {dtype}")));
            }
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| MtpError::Format(format!("tensor {name}: size overflow")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| MtpError::Format("size overflow".into()))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(NamedTensor { name, dims, values });
        }
        if r.pos != body.len() {
            return Err(MtpError::Format("trailing bytes after tensor table".into()));
        }
        Ok(Self {
            config_text,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| MtpError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| MtpError::io(path, e))?;
        Self::decode(&bytes)
    }

    fn find(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| MtpError::Format(format!("checkpoint lacks tensor '{name}'")))
    }

    /// Splits the config text into the run configuration and `state.*` entries.
    pub fn run_config(&self) -> Result<(RunConfig, Vec<(String, String)>)> {
        let pairs = RunConfig::parse_text(&self.config_text)?;
        let (state, run): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|(k, _)| k.starts_with("state."));
        Ok((RunConfig::from_pairs(run)?, state))
    }
}

fn state_value(state: &[(String, String)], key: &str) -> Result<u64> {
    state
        .iter()
        .find(|(k, _)| k == key)
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| MtpError::Format(format!("checkpoint lacks {key}")))
}

/// Snapshot of a trainer (parameters, Adam moments, step) under `run`.
pub fn from_trainer(trainer: &Trainer, run: &RunConfig) -> Checkpoint {
    let mut lines: Vec<String> = run.canonical().lines().map(str::to_string).collect();
    lines.push(format!("state.adam_t={}", trainer.adam.t));
    lines.push(format!(
        "state.data_stream={:016x}",
        rng::derive_seed(run.seed, &[rng::purpose("data-position"), trainer.step])
    ));
    lines.push(format!("state.step={}", trainer.step));
    lines.sort();
    let mut config_text = lines.join("\n");
    config_text.push('\n');

    let mut tensors = Vec::new();
    for (i, p) in trainer.model.params.iter().enumerate() {
        tensors.push(NamedTensor {
            name: p.name.clone(),
            dims: p.tensor.shape().to_vec(),
            values: p.tensor.values().to_vec(),
        });
        for (prefix, buf) in [("adam.m.", &trainer.adam.m[i]), ("adam.v.", &trainer.adam.v[i])] {
            tensors.push(NamedTensor {
                name: format!("{prefix}{}", p.name),
                dims: p.tensor.shape().to_vec(),
                values: buf.clone(),
            });
        }
    }
    Checkpoint {
        config_text,
        tensors,
    }
}

/// Model parameters only.
pub fn load_model(ckpt: &Checkpoint) -> Result<(MultiTokenModel, RunConfig)> {
    let (run, _) = ckpt.run_config()?;
    let mut model = MultiTokenModel::new(run.model.clone())?;
    for p in model.params.iter_mut() {
        let t = ckpt.find(&p.name)?;
        if t.dims != p.tensor.shape() {
            return Err(MtpError::Format(format!(
                "tensor {} has dims {:?}, model expects {:?}",
                p.name,
                t.dims,
                p.tensor.shape()
            )));
        }
        p.tensor.values_mut().copy_from_slice(&t.values);
    }
    Ok((model, run))
}

/// Full trainer state, ready to continue exactly where it stopped.
pub fn to_trainer(ckpt: &Checkpoint) -> Result<(Trainer, RunConfig)> {
    let (model, run) = load_model(ckpt)?;
    let (_, state) = ckpt.run_config()?;
    let mut trainer = Trainer::new(model, run.train.clone())?;
    trainer.seq_len = run.train_seq_len;
    trainer.step = state_value(&state, "state.step")?;
    let mut adam = AdamState::new(&trainer.model.params);
    adam.t = state_value(&state, "state.adam_t")?;
    for (i, p) in trainer.model.params.iter().enumerate() {
        adam.m[i] = ckpt.find(&format!("adam.m.{}", p.name))?.values.clone();
        adam.v[i] = ckpt.find(&format!("adam.v.{}", p.name))?.values.clone();
    }
    trainer.adam = adam;
    Ok((trainer, run))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn future_version_is_rejected() {
        let c = Checkpoint {
            config_text: "seed=0\n".into(),
            tensors: vec![],
        };
        let mut bytes = c.encode();
        bytes[4] = 2;
        let body = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body]);
        bytes[body..].copy_from_slice(&crc.to_le_bytes());
        let err = Checkpoint::decode(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
    }

    #[test]
    fn encode_decode_identity() {
        let c = Checkpoint {
            config_text: "a=1\n".into(),
            tensors: vec![NamedTensor {
                name: "w".into(),
                dims: vec![2, 1],
                values: vec![1.5, -0.0],
            }],
        };
        assert_eq!(Checkpoint::decode(&c.encode()).unwrap(), c);
    }
}
