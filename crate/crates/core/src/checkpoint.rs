//! Parameter checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0..8        magic  b"PRSEGCKP"
//! 8..16       u64    manifest length M in bytes
//! 16..16+M    UTF-8 JSON manifest
//! 16+M..      f64 values of every array, back to back
//! ```
//!
//! The manifest is `{"version": 1, "arrays": {name: {"shape": [..],
//! "offset": bytes}}, "meta": {..}}`; offsets count from the first byte of
//! the data section.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PRSEGCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    arrays: BTreeMap<String, ArrayEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// In-memory checkpoint: named arrays plus free-form metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub arrays: IndexMap<String, (Vec<usize>, Vec<f64>)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.arrays.insert(name.into(), (shape, data));
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.arrays.get(name).map(|(s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        // arrays are laid out in name order so the bytes do not depend on
        // insertion order
        let mut names: Vec<&String> = self.arrays.keys().collect();
        names.sort();
        let mut arrays = BTreeMap::new();
        let mut offset = 0u64;
        for name in &names {
            let (shape, data) = &self.arrays[*name];
            if shape.iter().product::<usize>() != data.len() {
                return Err(Error::Checkpoint(format!(
                    "array `{name}` has {} values for shape {shape:?}",
                    data.len()
                )));
            }
            arrays.insert((*name).clone(), ArrayEntry { shape: shape.clone(), offset });
            offset += 8 * data.len() as u64;
        }
        let manifest = serde_json::to_vec(&Manifest {
            version: VERSION,
            arrays,
            meta: self.meta.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + manifest.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for name in names {
            for v in &self.arrays[name].1 {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("missing magic header".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let manifest_end = 16usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..manifest_end])?;
        if manifest.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", manifest.version)));
        }
        let data = &bytes[manifest_end..];
        let mut arrays = IndexMap::new();
        for (name, entry) in manifest.arrays {
            let n: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + 8 * n;
            if end > data.len() {
                return Err(Error::Checkpoint(format!("array `{name}` runs past end of file")));
            }
            let values = data[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.insert(name, (entry.shape, values));
        }
        Ok(Checkpoint {
            arrays,
            meta: manifest.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_little_endian_with_manifest() {
        let mut ck = Checkpoint::default();
        ck.insert("b", vec![1], vec![2.5]);
        ck.insert("a", vec![2], vec![1.0, -1.0]);
        ck.meta = serde_json::json!({"step": 3});
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let m = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let manifest: serde_json::Value = serde_json::from_slice(&bytes[16..16 + m]).unwrap();
        assert_eq!(manifest["arrays"]["a"]["offset"], 0);
        assert_eq!(manifest["arrays"]["b"]["offset"], 16);
        assert_eq!(manifest["arrays"]["b"]["shape"], serde_json::json!([1]));
        let data = &bytes[16 + m..];
        assert_eq!(data.len(), 24);
        assert_eq!(f64::from_le_bytes(data[16..24].try_into().unwrap()), 2.5);

        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.get("a").unwrap().1, &[1.0, -1.0]);
        assert_eq!(back.meta["step"], 3);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
        let mut ck = Checkpoint::default();
        ck.insert("x", vec![4], vec![0.0; 4]);
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let mut ck = Checkpoint::default();
        ck.insert("w", vec![2, 2], vec![0.1, 0.2, 0.3, f64::MIN_POSITIVE]);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
