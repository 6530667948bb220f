//! Versioned binary container for model weights.
//!
//! Layout: the 8-byte magic `ACCKPT\0\0`, a little-endian `u32` format
//! version, a `u64` header length, a JSON header (kind, config, config hash,
//! free-form metadata, tensor directory) and finally every tensor as
//! row-major little-endian `f64`.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ACCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

/// Hex SHA-256 of the canonical JSON encoding of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serialises");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    config_hash: String,
    config: serde_json::Value,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// In-memory checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Array2<f64>)>,
}

impl Checkpoint {
    pub fn new<C: Serialize>(kind: &str, config: &C) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            config_hash: config_hash(config),
            config: serde_json::to_value(config).expect("config serialises"),
            metadata: serde_json::Value::Null,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Array2<f64>) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn tensor(&self, name: &str) -> Result<&Array2<f64>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    /// Decodes the stored config after checking kind and hash against
    /// `expected`.
    pub fn verified_config<C: Serialize + DeserializeOwned>(&self, kind: &str, expected: &C) -> Result<C> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        let want = config_hash(expected);
        if want != self.config_hash {
            return Err(Error::ConfigHashMismatch {
                expected: want,
                found: self.config_hash.clone(),
            });
        }
        self.config()
    }

    /// Decodes the stored config, checking only internal consistency.
    pub fn config<C: Serialize + DeserializeOwned>(&self) -> Result<C> {
        let config: C = serde_json::from_value(self.config.clone())?;
        if config_hash(&config) != self.config_hash {
            return Err(Error::Checkpoint("stored config does not match its hash".into()));
        }
        Ok(config)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            config_hash: self.config_hash.clone(),
            config: self.config.clone(),
            metadata: self.metadata.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    rows: t.nrows(),
                    cols: t.ncols(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
        out.write_u64::<LittleEndian>(header.len() as u64).unwrap();
        out.write_all(&header).unwrap();
        for (_, t) in &self.tensors {
            for &x in t.as_standard_layout().iter() {
                out.write_f64::<LittleEndian>(x).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = cur.read_u32::<LittleEndian>().map_err(|_| bad("truncated"))?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let len = cur.read_u64::<LittleEndian>().map_err(|_| bad("truncated"))? as usize;
        let start = cur.position() as usize;
        let header_bytes = bytes.get(start..start + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(header_bytes)?;
        cur.set_position((start + len) as u64);
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let mut data = vec![0.0; entry.rows * entry.cols];
            cur.read_f64_into::<LittleEndian>(&mut data)
                .map_err(|_| Error::Checkpoint(format!("truncated tensor {}", entry.name)))?;
            let t = Array2::from_shape_vec((entry.rows, entry.cols), data)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            tensors.push((entry.name, t));
        }
        Ok(Checkpoint {
            kind: header.kind,
            config_hash: header.config_hash,
            config: header.config,
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
