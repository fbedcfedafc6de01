//! Binary weight blob: named f64 tensors with an FNV-1a trailer.
//!
//! Layout (little endian):
//! `b"LSEGWTS\0"`, `u32` version, `u32` count, then per tensor
//! `u32` name length, name bytes, `u32` rank, `u64` dims, `f64` values;
//! finally a `u64` FNV-1a hash of everything before it.

use std::path::Path;

use super::param::Module;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LSEGWTS\0";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn encode(module: &dyn Module) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    let mut count = 0u32;
    module.visit(&mut |_| count += 1);
    out.extend_from_slice(&count.to_le_bytes());
    module.visit(&mut |p| {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    let h = fnv1a(&out);
    out.extend_from_slice(&h.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if n > self.buf.len() - self.pos {
            return Err(format!("unexpected end of data at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<NamedTensor>, String> {
    if bytes.len() < MAGIC.len() + 16 {
        return Err("file too short".into());
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(format!("unsupported weights version {version}"));
    }
    let expected = u64::from_le_bytes(trailer.try_into().unwrap());
    if fnv1a(body) != expected {
        return Err("checksum mismatch (truncated or corrupted)".into());
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| e.to_string())?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(8usize, |acc, &d| acc.checked_mul(d))
            .ok_or("tensor size overflows")?;
        let raw = r.take(n)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor {
            name,
            shape,
            values,
        });
    }
    if r.pos != body.len() {
        return Err("trailing bytes after last tensor".into());
    }
    Ok(tensors)
}

pub fn read(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn write(module: &dyn Module, path: &Path) -> Result<()> {
    std::fs::write(path, encode(module)).map_err(|e| Error::io(path, e))
}

/// Copy tensors into the module's parameters by name. With `prefix` set,
/// only parameters whose name starts with it are touched. Every touched
/// parameter must be present with an identical shape.
pub fn load_into(
    module: &mut dyn Module,
    tensors: &[NamedTensor],
    prefix: Option<&str>,
) -> Result<()> {
    let by_name: std::collections::HashMap<&str, &NamedTensor> =
        tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut err = None;
    let mut touched = 0usize;
    module.visit_mut(&mut |p| {
        if err.is_some() || prefix.is_some_and(|pre| !p.name.starts_with(pre)) {
            return;
        }
        match by_name.get(p.name.as_str()) {
            Some(t) if t.shape == p.shape => {
                p.value.copy_from_slice(&t.values);
                touched += 1;
            }
            Some(t) => {
                err = Some(Error::ConfigMismatch(format!(
                    "{}: stored shape {:?}, model shape {:?}",
                    p.name, t.shape, p.shape
                )))
            }
            None => {
                err = Some(Error::ConfigMismatch(format!(
                    "parameter {} missing from weights",
                    p.name
                )))
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if prefix.is_none() && touched != tensors.len() {
        return Err(Error::ConfigMismatch(format!(
            "weights hold {} tensors, model has {touched}",
            tensors.len()
        )));
    }
    Ok(())
}
