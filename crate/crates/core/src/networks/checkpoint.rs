//! Single-file checkpoints: an 8-byte magic, a little-endian `u64` header
//! length, a JSON header, then every tensor as little-endian `f64`s in
//! header order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelSpec, NamedState};
use crate::error::{FmpnError, Result};

const MAGIC: &[u8; 8] = b"FMPNCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: ModelSpec,
    pub seed: u64,
    pub epoch: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub data: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, seed: u64, epoch: usize) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                spec,
                seed,
                epoch,
                tensors: Vec::new(),
            },
            data: BTreeMap::new(),
        }
    }

    fn insert(&mut self, name: String, shape: Vec<usize>, values: &[f64]) {
        if self.data.insert(name.clone(), values.to_vec()).is_none() {
            self.header.tensors.push(TensorEntry { name, shape });
        }
    }

    /// Records every parameter and buffer of `state`.
    pub fn capture<S: NamedState + ?Sized>(&mut self, state: &S) {
        for p in state.params() {
            self.insert(p.name.clone(), p.shape.clone(), &p.value);
        }
        for (name, buf) in state.buffers() {
            self.insert(name, vec![buf.len()], buf);
        }
    }

    /// Copies stored tensors into `state`; every parameter and buffer must be present.
    pub fn restore<S: NamedState + ?Sized>(&self, state: &mut S) -> Result<()> {
        let lookup = |name: &str, len: usize| -> Result<&Vec<f64>> {
            let v = self
                .data
                .get(name)
                .ok_or_else(|| FmpnError::Load(format!("missing tensor {name}")))?;
            if v.len() != len {
                return Err(FmpnError::Load(format!(
                    "tensor {name} has {} values, expected {len}",
                    v.len()
                )));
            }
            Ok(v)
        };
        for p in state.params_mut() {
            let v = lookup(&p.name, p.value.len())?;
            p.value.copy_from_slice(v);
        }
        for (name, buf) in state.buffers_mut() {
            let v = lookup(&name, buf.len())?;
            buf.copy_from_slice(v);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for entry in &self.header.tensors {
            for v in &self.data[&entry.name] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(FmpnError::Load("not a checkpoint file".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + len)
            .ok_or_else(|| FmpnError::Load("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        let mut offset = 16 + len;
        let mut data = BTreeMap::new();
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 8 * n)
                .ok_or_else(|| FmpnError::Load(format!("truncated tensor {}", entry.name)))?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data.insert(entry.name.clone(), values);
            offset += 8 * n;
        }
        if offset != bytes.len() {
            return Err(FmpnError::Load("trailing bytes after last tensor".into()));
        }
        Ok(Checkpoint { header, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| FmpnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path).map_err(|e| FmpnError::io(path, e))?)
    }
}
