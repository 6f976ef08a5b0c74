//! Binary checkpoint: magic `GNET`, version, configuration text, iteration counter,
//! parameter and momentum tables, SHA-256 trailer over everything before it.
//!
//! All integers are little-endian. A tensor entry is
//! `u32 name_len, name, 4×u64 shape, numel × element` with the table's dtype.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{DType, Real, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"GNET";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    /// Canonical configuration text of the run that produced the weights.
    pub config: String,
    /// Optimiser steps already taken.
    pub iteration: u64,
    pub params: ParamStore<T>,
    pub momentum: ParamStore<T>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_table<T: Real>(out: &mut Vec<u8>, table: &ParamStore<T>) {
    put_u32(out, table.len() as u32);
    for (name, t) in table.iter() {
        put_u32(out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        for d in t.shape().0 {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(out);
        }
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        out.push(T::DTYPE.code());
        put_u32(&mut out, self.config.len() as u32);
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        put_table(&mut out, &self.params);
        put_table(&mut out, &self.momentum);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a GNET checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}, expected {VERSION}")));
        }
        let code = r.take(1)?[0];
        let dtype = DType::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown dtype code {code}")))?;
        if dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!("stored as {dtype:?}, requested {:?}", T::DTYPE)));
        }
        let n = r.u32()? as usize;
        let config = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("configuration text is not UTF-8".into()))?;
        let iteration = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let params = r.table()?;
        let momentum = r.table()?;
        let body = r.pos;
        let stored = r.take(DIGEST_LEN)?;
        if Sha256::digest(&bytes[..body]).as_slice() != stored {
            return Err(Error::Checkpoint("checksum mismatch, file is corrupt".into()));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes after checksum", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            iteration,
            params,
            momentum,
        })
    }

    /// Writes via a temporary file and rename, so a crash never leaves a half-written checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless the stored configuration text equals `expected`, ignoring the
    /// run-control keys in [`RUN_CONTROL_KEYS`].
    pub fn check_config(&self, expected: &str) -> Result<()> {
        let (stored, wanted) = (trajectory_lines(&self.config), trajectory_lines(expected));
        if stored == wanted {
            return Ok(());
        }
        let diff: Vec<String> = stored
            .iter()
            .zip(&wanted)
            .filter(|(a, b)| a != b)
            .map(|(a, b)| format!("checkpoint '{a}' vs requested '{b}'"))
            .collect();
        Err(Error::Checkpoint(format!("incompatible configuration: {}", if diff.is_empty() { "different key sets".into() } else { diff.join("; ") })))
    }
}

/// Keys that decide when a run stops or saves, not what it computes.
pub const RUN_CONTROL_KEYS: [&str; 2] = ["max_iters", "checkpoint_every"];

fn trajectory_lines(text: &str) -> Vec<&str> {
    text.lines()
        .filter(|l| {
            let key = l.split('=').next().unwrap_or("").trim();
            !RUN_CONTROL_KEYS.contains(&key)
        })
        .collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {}: needed {n} more bytes", self.bytes.len()))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn table<T: Real>(&mut self) -> Result<ParamStore<T>> {
        let count = self.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let n = self.u32()? as usize;
            let name = String::from_utf8(self.take(n)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint(format!("'{name}': dimension overflow")))?;
            }
            let shape = Shape(dims);
            let size = T::DTYPE.size();
            let len = dims
                .iter()
                .try_fold(size, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("'{name}': shape overflow")))?;
            let raw = self.take(len)?;
            let data = raw.chunks_exact(size).map(T::read_le).collect();
            store.insert(name, Tensor::from_vec(shape, data)?);
        }
        Ok(store)
    }
}
