//! Weight checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SPW2" | version u32 = 1
//! config_len u32 | config JSON
//! n_params u32
//!   name_len u32 | name | ndim u32 | dims u64 x ndim | values f64 x prod(dims)
//! has_adam u8
//!   step u64 | lr f64 | n_slots u32
//!     len u64 | m f64 x len | v f64 x len
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Adam, NeuralError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPW2";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Model configuration as JSON.
    pub config: String,
    pub params: Vec<NamedTensor>,
    pub adam: Option<Adam>,
}

fn err(msg: impl Into<String>) -> NeuralError {
    NeuralError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for d in &p.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &p.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        match &self.adam {
            None => out.push(0),
            Some(adam) => {
                out.push(1);
                out.extend_from_slice(&adam.step.to_le_bytes());
                out.extend_from_slice(&adam.lr.to_le_bytes());
                out.extend_from_slice(&(adam.m.len() as u32).to_le_bytes());
                for (m, v) in adam.m.iter().zip(&adam.v) {
                    out.extend_from_slice(&(m.len() as u64).to_le_bytes());
                    for x in m.iter().chain(v) {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(err("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let config = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| err("config is not UTF-8"))?;
        let n = r.u32()? as usize;
        let mut params = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| err("name is not UTF-8"))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let values = r.f64s(count)?;
            params.push(NamedTensor { name, shape, values });
        }
        let adam = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let lr = r.f64()?;
                let slots = r.u32()? as usize;
                let mut adam = Adam::new(lr);
                adam.step = step;
                for _ in 0..slots {
                    let len = r.u64()? as usize;
                    adam.m.push(r.f64s(len)?);
                    adam.v.push(r.f64s(len)?);
                }
                Some(adam)
            }
            _ => return Err(err("bad optimizer flag")),
        };
        if r.pos != bytes.len() {
            return Err(err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config, params, adam })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| err("truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| err("size overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let mut f = std::fs::File::create(path.as_ref()).map_err(|e| err(e.to_string()))?;
    f.write_all(&ckpt.to_bytes()).map_err(|e| err(e.to_string()))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path.as_ref())
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| err(format!("{}: {e}", path.as_ref().display())))?;
    Checkpoint::from_bytes(&bytes)
}
