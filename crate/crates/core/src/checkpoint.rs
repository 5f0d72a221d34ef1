//! Binary tensor archive.
//!
//! Layout, all integers little-endian: magic `MCDB`, version `u32 = 1`,
//! tensor count `u32`, then per tensor in lexicographic name order the name
//! length `u32`, the UTF-8 name, the rank `u32`, each dimension as `u64`, and
//! the row-major entries as `f64`. Matrices are written with rank 2.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::MinMaxScaler;
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Matrix, Rng};
use crate::params::{load_named, named_tensors};
use crate::training::{streams, McDbn, TrainConfig};

pub const MAGIC: [u8; 4] = *b"MCDB";
pub const VERSION: u32 = 1;

pub fn encode(tensors: &BTreeMap<String, Matrix>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint {
            offset: self.offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.offset;
        if remaining < n {
            return Err(self.fail(format!(
                "truncated {what}: expected {n} bytes, found {remaining} (file length {}, needed at least {})",
                self.bytes.len(),
                self.offset + n
            )));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<BTreeMap<String, Matrix>> {
    let mut r = Reader { bytes, offset: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        r.offset = 0;
        return Err(r.fail(format!("bad magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        r.offset = 4;
        return Err(r.fail(format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = r.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let start = r.offset;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|e| r.fail(format!("name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32("rank")?;
        let dims: Vec<u64> = (0..rank)
            .map(|_| r.u64("dimension"))
            .collect::<Result<_>>()?;
        let (rows, cols) = match dims.as_slice() {
            [] => (1, 1),
            [n] => (1, *n as usize),
            [m, n] => (*m as usize, *n as usize),
            _ => {
                return Err(r.fail(format!(
                    "tensor {name} has rank {rank}; only ranks up to 2 are supported"
                )))
            }
        };
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| r.fail(format!("tensor {name} is too large")))?;
        let data: Vec<f64> = r
            .take(n, "tensor data")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if tensors
            .insert(name.clone(), Matrix::from_vec(rows, cols, data)?)
            .is_some()
        {
            r.offset = start;
            return Err(r.fail(format!("duplicate tensor {name}")));
        }
    }
    if r.offset != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.offset)));
    }
    Ok(tensors)
}

pub fn save_checkpoint(path: impl AsRef<Path>, tensors: &BTreeMap<String, Matrix>) -> Result<()> {
    std::fs::write(path, encode(tensors))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<BTreeMap<String, Matrix>> {
    decode(&std::fs::read(path)?)
}

/// A trained model with the scalers that map data into its input range.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: McDbn,
    pub scaler_x: MinMaxScaler,
    pub scaler_y: MinMaxScaler,
}

impl TrainedModel {
    pub fn tensors(&self) -> BTreeMap<String, Matrix> {
        let mut t = named_tensors(&self.model, "model");
        for (name, s) in [("x", &self.scaler_x), ("y", &self.scaler_y)] {
            let (min, max) = s.to_tensors();
            t.insert(format!("scaler.{name}.min"), min);
            t.insert(format!("scaler.{name}.max"), max);
        }
        t
    }

    /// Rebuilds the architecture from `cfg` and fills it from `tensors`.
    /// Input widths and the class count are read from the scaler and head
    /// tensors.
    pub fn from_tensors(tensors: &BTreeMap<String, Matrix>, cfg: &TrainConfig) -> Result<Self> {
        let get = |name: &str| {
            tensors
                .get(name)
                .ok_or_else(|| Error::Data(format!("tensor {name} missing from checkpoint")))
        };
        let scaler_x = MinMaxScaler::from_tensors(get("scaler.x.min")?, get("scaler.x.max")?)?;
        let scaler_y = MinMaxScaler::from_tensors(get("scaler.y.min")?, get("scaler.y.max")?)?;
        let classes = get("model.head.linear.bias")?.cols();
        let mut model = McDbn::new(
            cfg,
            scaler_x.dim(),
            scaler_y.dim(),
            classes.max(2),
            &mut Rng::new(derive_seed(cfg.seed, streams::INIT)),
        )?;
        load_named(&mut model, "model", tensors)?;
        Ok(Self {
            model,
            scaler_x,
            scaler_y,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.tensors())
    }

    pub fn load(path: impl AsRef<Path>, cfg: &TrainConfig) -> Result<Self> {
        Self::from_tensors(&load_checkpoint(path)?, cfg)
    }
}
