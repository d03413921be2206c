//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u32` header length, JSON header
//! (detector config, fingerprints, tensor table, metadata), then every
//! tensor as little-endian `f32` in table order. Round-trips bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Detector, DetectorConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SDCKPT01";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub detector: Detector,
    pub dataset_fingerprint: String,
    pub catalog_fingerprint: String,
    pub meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: DetectorConfig,
    dataset_fingerprint: String,
    catalog_fingerprint: String,
    meta: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        for (name, layer) in self.detector.layer_names().into_iter().zip(self.detector.layers()) {
            for (suffix, data) in [("weight", &layer.weight), ("bias", &layer.bias)] {
                tensors.push(TensorEntry {
                    name: format!("{name}.{suffix}"),
                    len: data.len(),
                });
                payload.extend(data.iter().flat_map(|v| v.to_le_bytes()));
            }
        }
        let header = serde_json::to_vec(&Header {
            config: self.detector.config.clone(),
            dataset_fingerprint: self.dataset_fingerprint.clone(),
            catalog_fingerprint: self.catalog_fingerprint.clone(),
            meta: self.meta.clone(),
            tensors,
        })?;
        let mut out = Vec::with_capacity(12 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(origin, m.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut detector = Detector::new(header.config, 0)?;
        let names = detector.layer_names();
        let mut cursor = 12 + hlen;
        let mut entries = header.tensors.iter();
        for (name, layer) in names.iter().zip(detector.layers_mut()) {
            for (suffix, data) in [("weight", &mut layer.weight), ("bias", &mut layer.bias)] {
                let e = entries.next().ok_or_else(|| bad("missing tensor"))?;
                if e.name != format!("{name}.{suffix}") || e.len != data.len() {
                    return Err(bad(&format!("tensor {} does not match the detector layout", e.name)));
                }
                let raw = bytes.get(cursor..cursor + 4 * e.len).ok_or_else(|| bad("truncated tensor data"))?;
                for (v, chunk) in data.iter_mut().zip(raw.chunks_exact(4)) {
                    *v = f32::from_le_bytes(chunk.try_into().unwrap());
                }
                cursor += 4 * e.len;
            }
        }
        if cursor != bytes.len() || entries.next().is_some() {
            return Err(bad("trailing data"));
        }
        Ok(Self {
            detector,
            dataset_fingerprint: header.dataset_fingerprint,
            catalog_fingerprint: header.catalog_fingerprint,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
