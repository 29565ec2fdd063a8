// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary tensor container.
//!
//! Layout on disk:
//!
//! ```text
//! [u64 little-endian header length N][N bytes of JSON header][payload]
//! ```
//!
//! The header is a JSON object with sorted keys. `__metadata__` holds a free
//! form metadata map including `format`; every other key names a tensor:
//! `{"dtype": "f32", "shape": [...], "offset": o, "length": n}`. Offsets are
//! relative to the start of the payload, contiguous and increasing in key
//! order, and `length = 4 * prod(shape)`. The payload is the concatenation
//! of little-endian row-major `f32` blobs.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "seedstab-tensor/1";
const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorEntry {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub metadata: BTreeMap<String, Value>,
    pub tensors: BTreeMap<String, TensorEntry>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.tensors
            .insert(name.into(), TensorEntry::new(shape, data));
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: Value) {
        self.metadata.insert(key.into(), value);
    }

    pub fn meta(&self, key: &str) -> Result<&Value> {
        self.metadata
            .get(key)
            .ok_or_else(|| Error::CorruptHeader(format!("metadata key `{key}` missing")))
    }

    pub fn meta_as<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        serde_json::from_value(self.meta(key)?.clone())
            .map_err(|e| Error::CorruptHeader(format!("metadata key `{key}`: {e}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&TensorEntry> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::CorruptHeader(format!("tensor `{name}` missing")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = Map::new();
        let mut meta: Map<String, Value> = self
            .metadata
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        meta.insert("format".into(), Value::String(FORMAT_VERSION.into()));
        header.insert(METADATA_KEY.into(), Value::Object(meta));
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            let length = t.data.len() * 4;
            header.insert(
                name.clone(),
                json!({"dtype": "f32", "shape": t.shape, "offset": offset, "length": length}),
            );
            offset += length;
        }
        let header = serde_json::to_vec(&Value::Object(header)).expect("header serialises");
        let mut out = Vec::with_capacity(8 + header.len() + offset);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::TruncatedPayload {
                expected: 8,
                found: bytes.len() as u64,
            });
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        let available = bytes.len() as u64 - 8;
        if header_len > available {
            return Err(Error::TruncatedPayload {
                expected: header_len + 8,
                found: bytes.len() as u64,
            });
        }
        let header_end = 8 + header_len as usize;
        let header: Value = serde_json::from_slice(&bytes[8..header_end])
            .map_err(|e| Error::CorruptHeader(format!("header is not JSON: {e}")))?;
        let Value::Object(mut header) = header else {
            return Err(Error::CorruptHeader("header is not a JSON object".into()));
        };
        let metadata = match header.remove(METADATA_KEY) {
            Some(Value::Object(m)) => m,
            _ => return Err(Error::CorruptHeader("missing metadata".into())),
        };
        match metadata.get("format").and_then(Value::as_str) {
            Some(FORMAT_VERSION) => {}
            found => {
                return Err(Error::VersionMismatch {
                    found: found.unwrap_or("<none>").to_string(),
                    expected: FORMAT_VERSION.to_string(),
                })
            }
        }

        struct Spec {
            name: String,
            shape: Vec<usize>,
            offset: u64,
            length: u64,
        }
        let mut specs = Vec::with_capacity(header.len());
        for (name, entry) in header {
            let corrupt = |what: &str| Error::CorruptHeader(format!("tensor `{name}`: {what}"));
            if entry.get("dtype").and_then(Value::as_str) != Some("f32") {
                return Err(corrupt("dtype must be f32"));
            }
            let shape: Vec<usize> = entry
                .get("shape")
                .cloned()
                .and_then(|s| serde_json::from_value(s).ok())
                .ok_or_else(|| corrupt("bad shape"))?;
            let offset = entry
                .get("offset")
                .and_then(Value::as_u64)
                .ok_or_else(|| corrupt("bad offset"))?;
            let length = entry
                .get("length")
                .and_then(Value::as_u64)
                .ok_or_else(|| corrupt("bad length"))?;
            let elems = shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
                .ok_or_else(|| corrupt("shape overflows"))?;
            if elems.checked_mul(4) != Some(length) {
                return Err(corrupt("shape product does not match length"));
            }
            specs.push(Spec {
                name,
                shape,
                offset,
                length,
            });
        }
        specs.sort_by(|a, b| a.name.cmp(&b.name));
        let mut expected_offset = 0u64;
        for s in &specs {
            if s.offset != expected_offset {
                return Err(Error::CorruptHeader(format!(
                    "tensor `{}` starts at {} but the previous tensor ends at {expected_offset}",
                    s.name, s.offset
                )));
            }
            expected_offset += s.length;
        }
        let payload = &bytes[header_end..];
        if (payload.len() as u64) < expected_offset {
            return Err(Error::TruncatedPayload {
                expected: header_end as u64 + expected_offset,
                found: bytes.len() as u64,
            });
        }
        if payload.len() as u64 > expected_offset {
            return Err(Error::CorruptHeader(format!(
                "{} trailing bytes after the last tensor",
                payload.len() as u64 - expected_offset
            )));
        }
        let mut tensors = BTreeMap::new();
        for s in specs {
            let blob = &payload[s.offset as usize..(s.offset + s.length) as usize];
            let data = blob
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(
                s.name,
                TensorEntry {
                    shape: s.shape,
                    data,
                },
            );
        }
        Ok(Self {
            metadata: metadata
                .into_iter()
                .filter(|(k, _)| k != "format")
                .collect(),
            tensors,
        })
    }

    /// Write via a temporary sibling file and rename, so readers never see a
    /// partially written file.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
