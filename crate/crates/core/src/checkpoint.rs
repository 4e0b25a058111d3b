//! Binary checkpoints of named tensors.
//!
//! Layout: the magic `MIXSEQ1\n`, a `u32` version, a `u32` tensor count, then
//! one manifest entry per tensor (`u32` name length, UTF-8 name, `u8` rank,
//! `u64` extents, `u8` element width in bytes), then every payload in
//! manifest order. All integers and values are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Params;

pub const MAGIC: &[u8; 8] = b"MIXSEQ1\n";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Width {
    F32,
    F64,
}

impl Width {
    pub fn bytes(self) -> u8 {
        match self {
            Width::F32 => 4,
            Width::F64 => 8,
        }
    }

    fn from_bytes(b: u8) -> Option<Self> {
        match b {
            4 => Some(Width::F32),
            8 => Some(Width::F64),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub width: Width,
    /// Values widened to f64; exact for both widths.
    pub values: Vec<f64>,
}

pub fn encode(model: &dyn Params, width: Width) -> Vec<u8> {
    let mut entries = Vec::new();
    model.visit("", &mut |name, p| {
        entries.push((
            name.to_string(),
            p.value.shape().to_vec(),
            p.value.data().to_vec(),
        ))
    });
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, _) in &entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(shape.len() as u8);
        for &e in shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        out.push(width.bytes());
    }
    for (_, _, values) in &entries {
        for &v in values {
            match width {
                Width::F64 => out.extend_from_slice(&v.to_le_bytes()),
                Width::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            ))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<StoredTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut manifest = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u64("extent").map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let w = r.u8("element width")?;
        let width = Width::from_bytes(w)
            .ok_or_else(|| Error::Checkpoint(format!("{name}: element width {w}")))?;
        manifest.push((name, shape, width));
    }
    let mut tensors = Vec::with_capacity(manifest.len());
    for (name, shape, width) in manifest {
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: extents overflow")))?;
        let size = n
            .checked_mul(width.bytes() as usize)
            .ok_or_else(|| Error::Checkpoint(format!("{name}: payload overflow")))?;
        let raw = r.take(size, &name)?;
        let values = match width {
            Width::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Width::F32 => raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        };
        tensors.push(StoredTensor {
            name,
            shape,
            width,
            values,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(tensors)
}

/// Overwrite the model's parameters from decoded tensors. Names, order and
/// shapes must match the model exactly; the first offending tensor is named.
pub fn load_into(model: &mut dyn Params, tensors: &[StoredTensor]) -> Result<()> {
    let mut expected = Vec::new();
    model.visit("", &mut |name, p| {
        expected.push((name.to_string(), p.value.shape().to_vec()))
    });
    for (i, (name, shape)) in expected.iter().enumerate() {
        let Some(t) = tensors.get(i) else {
            return Err(Error::Checkpoint(format!("missing tensor {name}")));
        };
        if &t.name != name || &t.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {i}: expected {name} {shape:?}, found {} {:?}",
                t.name, t.shape
            )));
        }
    }
    if tensors.len() > expected.len() {
        return Err(Error::Checkpoint(format!(
            "unexpected tensor {}",
            tensors[expected.len()].name
        )));
    }
    let mut i = 0;
    model.visit_mut("", &mut |_, p| {
        p.value.data_mut().copy_from_slice(&tensors[i].values);
        i += 1;
    });
    Ok(())
}

pub fn save(path: &Path, model: &dyn Params, width: Width) -> Result<()> {
    std::fs::write(path, encode(model, width))?;
    Ok(())
}

pub fn load(path: &Path, model: &mut dyn Params) -> Result<()> {
    let bytes = std::fs::read(path)?;
    load_into(model, &decode(&bytes)?)
}
