//! Parameter checkpoint container.
//!
//! Layout: the 4 magic bytes `E2OP`, a little-endian `u32` header length,
//! a UTF-8 JSON header, then every parameter block as little-endian `f64`
//! in header order, followed by the auxiliary blocks in header order.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"E2OP";

#[derive(Debug, Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct AuxHeader {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    step: u64,
    meta: serde_json::Value,
    blocks: Vec<BlockHeader>,
    aux: Vec<AuxHeader>,
}

/// A parameter store plus a kind tag, free-form metadata and named
/// auxiliary vectors (e.g. normalization statistics).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub store: ParamStore,
    pub aux: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value, store: ParamStore) -> Self {
        Self { kind: kind.into(), meta, store, aux: Vec::new() }
    }

    pub fn with_aux(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.aux.push((name.into(), values));
        self
    }

    pub fn aux(&self, name: &str) -> Option<&[f64]> {
        self.aux.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            step: self.store.step(),
            meta: self.meta.clone(),
            blocks: self
                .store
                .ids()
                .map(|id| {
                    let (r, c) = self.store.value(id).dim();
                    BlockHeader { name: self.store.name(id).to_string(), shape: [r, c] }
                })
                .collect(),
            aux: self.aux.iter().map(|(n, v)| AuxHeader { name: n.clone(), len: v.len() }).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + json.len() + 8 * self.store.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for id in self.store.ids() {
            for x in self.store.value(id).iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        for (_, v) in &self.aux {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::integrity(0, "missing E2OP magic"));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let body = 8 + hlen;
        if bytes.len() < body {
            return Err(Error::integrity(8, "truncated checkpoint header"));
        }
        let header: Header = serde_json::from_slice(&bytes[8..body])
            .map_err(|e| Error::integrity(8, format!("bad checkpoint header: {e}")))?;
        let total: usize = header.blocks.iter().map(|b| b.shape[0] * b.shape[1]).sum::<usize>()
            + header.aux.iter().map(|a| a.len).sum::<usize>();
        if bytes.len() != body + 8 * total {
            return Err(Error::integrity(
                bytes.len() as u64,
                format!("payload holds {} bytes, header declares {}", bytes.len() - body, 8 * total),
            ));
        }
        let mut pos = body;
        let mut next = |n: usize| -> Vec<f64> {
            let v = bytes[pos..pos + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            pos += 8 * n;
            v
        };
        let mut store = ParamStore::new();
        for b in &header.blocks {
            let vals = next(b.shape[0] * b.shape[1]);
            let arr = Array2::from_shape_vec((b.shape[0], b.shape[1]), vals)
                .map_err(|e| Error::integrity(0, e.to_string()))?;
            store.add(b.name.clone(), arr)?;
        }
        store.set_step(header.step);
        let aux = header.aux.iter().map(|a| (a.name.clone(), next(a.len))).collect();
        Ok(Self { kind: header.kind, meta: header.meta, store, aux })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
