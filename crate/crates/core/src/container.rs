//! `CBML1` model container: named 32-bit tensors with a trailing CRC32.
//!
//! Layout: `"CBML1\0"`, then per record `name_len: u32`, UTF-8 name,
//! `rank: u32`, `rank × u32` extents, raw little-endian `f32` data; finally
//! the CRC32 of every preceding byte.

use std::collections::BTreeMap;
use std::path::Path;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::layers::LayerParams;
use crate::tensor::{Scalar, Tensor};

pub const MODEL_MAGIC: &[u8; 6] = b"CBML1\0";

/// Ordered name → tensor records as stored in a container.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    records: Vec<(String, Tensor<f32>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<f32>) {
        let name = name.into();
        if let Some(slot) = self.records.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = tensor;
        } else {
            self.records.push((name, tensor));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.get(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn records(&self) -> &[(String, Tensor<f32>)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Store `weight` and `bias` of each parameter set as `<name>.weight` / `<name>.bias`.
    pub fn insert_params<T: Scalar>(&mut self, params: &[&LayerParams<T>]) {
        for p in params {
            self.insert(format!("{}.weight", p.name), p.weight.cast());
            self.insert(format!("{}.bias", p.name), p.bias.cast());
        }
    }

    /// Overwrite each parameter set from the store, checking shapes.
    pub fn load_params<T: Scalar>(&self, params: &mut [&mut LayerParams<T>]) -> Result<()> {
        for p in params.iter_mut() {
            let w = self.require(&format!("{}.weight", p.name))?;
            let b = self.require(&format!("{}.bias", p.name))?;
            if w.shape() != p.weight.shape() || b.shape() != p.bias.shape() {
                return Err(Error::shape(
                    "load_params",
                    (p.weight.shape(), p.bias.shape()),
                    (w.shape(), b.shape()),
                ));
            }
            **p = LayerParams::from_tensors(p.name.clone(), w.cast(), b.cast());
        }
        Ok(())
    }

    /// Records whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> BTreeMap<&str, &Tensor<f32>> {
        self.records
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(n, t)| (n.as_str(), t))
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(MODEL_MAGIC);
        for (name, t) in &self.records {
            w.u32(name.len() as u32);
            w.bytes(name.as_bytes());
            w.u32(t.rank() as u32);
            for &e in t.shape() {
                w.u32(e as u32);
            }
            w.f32s(t.data().iter().copied());
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::open(bytes, MODEL_MAGIC)?;
        let mut store = Self::new();
        while !r.at_end() {
            let start = r.position();
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.bytes(len, "name")?)
                .map_err(|_| Error::corrupt("parameter name is not UTF-8", start))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::corrupt(
                    format!("implausible rank {rank} for `{name}`"),
                    start,
                ));
            }
            let shape = (0..rank)
                .map(|_| r.u32("extent").map(|e| e as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| Error::corrupt("extent overflow", start))?;
            let data = r.f32s(n, &name)?;
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::corrupt(format!("record `{name}`: {e}"), start))?;
            store.records.push((name, t));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
