//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes  "RF3DCKPT"
//! version      u32
//! fingerprint  32 bytes SHA-256 of the canonical config JSON
//! config       u32 length + UTF-8 JSON
//! records      u32 count, then per record:
//!              u32 name length + UTF-8 name, u32 ndim, ndim x u64 dims,
//!              f32 data
//! ```
//! All integers and floats are little-endian.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"RF3DCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("config fingerprint mismatch: expected {expected}, file has {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("checkpoint lacks parameter {0}")]
    MissingParam(String),
    #[error("checkpoint has unknown parameter {0}")]
    UnexpectedParam(String),
    #[error("parameter {name}: shape {found:?} in file, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
}

/// Hex SHA-256 of the canonical config JSON.
pub fn fingerprint(cfg: &ModelConfig) -> String {
    hex(&Sha256::digest(cfg.canonical_json().as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Serializes a model to bytes.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let json = model.config.canonical_json();
    let mut out = Vec::with_capacity(64 + json.len() + 4 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&Sha256::digest(json.as_bytes()));
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in model.params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
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
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8, what)?);
        Ok(u64::from_le_bytes(a))
    }

    fn string(&mut self, what: &'static str) -> Result<String, CheckpointError> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| CheckpointError::Corrupt(format!("{what} is not UTF-8")))
    }
}

/// Parsed checkpoint contents.
pub struct Decoded {
    pub config: ModelConfig,
    pub fingerprint: String,
    pub records: Vec<(String, Tensor<f32>)>,
}

/// Parses bytes without touching any model.
pub fn decode(bytes: &[u8]) -> Result<Decoded, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) {
            CheckpointError::Truncated("magic")
        } else {
            CheckpointError::BadMagic
        });
    }
    if r.take(8, "magic")? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let fp = hex(r.take(32, "fingerprint")?);
    let json = r.string("config")?;
    let config: ModelConfig =
        serde_json::from_str(&json).map_err(|e| CheckpointError::Corrupt(format!("config: {e}")))?;
    let found = fingerprint(&config);
    if found != fp {
        return Err(CheckpointError::Corrupt(format!(
            "embedded config hashes to {found}, header says {fp}"
        )));
    }
    let count = r.u32("record count")? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.string("record name")?;
        let ndim = r.u32("record rank")? as usize;
        if ndim > 8 {
            return Err(CheckpointError::Corrupt(format!("{name}: rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("record shape")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CheckpointError::Corrupt(format!("{name}: shape {shape:?} overflows")))?;
        let raw = r.take(numel, "record data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        records.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(Decoded {
        config,
        fingerprint: fp,
        records,
    })
}

/// Copies decoded records into `model`, which must have been built from a
/// config with the same fingerprint.
pub fn restore(model: &mut Model, decoded: Decoded) -> Result<(), CheckpointError> {
    let expected = fingerprint(&model.config);
    if decoded.fingerprint != expected {
        return Err(CheckpointError::FingerprintMismatch {
            expected,
            found: decoded.fingerprint,
        });
    }
    let mut seen = vec![false; model.params.len()];
    for (name, t) in decoded.records {
        let id = model
            .params
            .id(&name)
            .ok_or_else(|| CheckpointError::UnexpectedParam(name.clone()))?;
        let p = model.params.get_mut(id);
        if p.value.shape() != t.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: p.value.shape().to_vec(),
                found: t.shape().to_vec(),
            });
        }
        p.value = t;
        seen[id.0] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let name = model.params.iter().nth(i).map(|p| p.name.clone()).unwrap_or_default();
        return Err(CheckpointError::MissingParam(name));
    }
    Ok(())
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> crate::Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

/// Builds a model from the embedded config and loads its weights.
pub fn load(path: impl AsRef<Path>) -> crate::Result<Model> {
    let bytes = std::fs::read(path)?;
    let decoded = decode(&bytes)?;
    let mut model = Model::build(&decoded.config)?;
    restore(&mut model, decoded)?;
    Ok(model)
}

/// Loads weights into an existing model, rejecting checkpoints written for a
/// different config.
pub fn load_into(model: &mut Model, path: impl AsRef<Path>) -> crate::Result<()> {
    let bytes = std::fs::read(path)?;
    restore(model, decode(&bytes)?)?;
    Ok(())
}
