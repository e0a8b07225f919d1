//! Checkpoint container: a JSON manifest followed by raw little-endian
//! payloads.
//!
//! ```text
//! SGRECKPT 1\n
//! <manifest length in bytes>\n
//! <manifest JSON>
//! <payload bytes>
//! ```
//!
//! Array names are namespaced by parameter group, e.g. `sbr.item_embeddings`
//! or `lora.block0.q.a`. String lists (vocabularies, tokenizers) travel in
//! the manifest's `text` section.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::real::{DType, Real};
use crate::tensor::Tensor;

const MAGIC: &str = "SGRECKPT 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub arrays: Vec<ArrayEntry>,
    #[serde(default)]
    pub text: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
struct Stored {
    dtype: DType,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

/// In-memory checkpoint. Arrays keep the precision they were inserted with
/// and are converted on read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    arrays: BTreeMap<String, Stored>,
    text: BTreeMap<String, Vec<String>>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<T: Real>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) {
        self.arrays.insert(
            name.into(),
            Stored {
                dtype: T::DTYPE,
                shape: tensor.shape().to_vec(),
                bytes: tensor.to_le_bytes(),
            },
        );
    }

    pub fn insert_text(&mut self, name: impl Into<String>, lines: Vec<String>) {
        self.text.insert(name.into(), lines);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn text(&self, name: &str) -> Option<&[String]> {
        self.text.get(name).map(Vec::as_slice)
    }

    pub fn get<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        let stored = self
            .arrays
            .get(name)
            .ok_or_else(|| TensorError::Checkpoint(format!("no array named `{name}`")))?;
        let width = stored.dtype.size();
        let data = stored
            .bytes
            .chunks_exact(width)
            .map(|c| match stored.dtype {
                DType::F32 => T::of(f32::read_le(c) as f64),
                DType::F64 => T::of(f64::read_le(c)),
            })
            .collect();
        Tensor::new(stored.shape.clone(), data)
    }

    pub fn manifest(&self) -> Manifest {
        let mut offset = 0;
        let arrays = self
            .arrays
            .iter()
            .map(|(name, s)| {
                let entry = ArrayEntry {
                    name: name.clone(),
                    dtype: s.dtype,
                    shape: s.shape.clone(),
                    offset,
                    length: s.bytes.len(),
                };
                offset += s.bytes.len();
                entry
            })
            .collect();
        Manifest {
            arrays,
            text: self.text.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec_pretty(&self.manifest()).expect("manifest serializes");
        let mut out = Vec::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "{}", manifest.len()).unwrap();
        out.extend_from_slice(&manifest);
        for s in self.arrays.values() {
            out.extend_from_slice(&s.bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| TensorError::Checkpoint(msg.to_string());
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        let magic = lines.next().ok_or_else(|| bad("empty file"))?;
        if magic != MAGIC.as_bytes() {
            return Err(bad("bad magic header"));
        }
        let len_line = lines.next().ok_or_else(|| bad("missing manifest length"))?;
        let len: usize = std::str::from_utf8(len_line)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("unreadable manifest length"))?;
        let rest = lines.next().ok_or_else(|| bad("missing manifest"))?;
        if rest.len() < len {
            return Err(bad("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&rest[..len])
            .map_err(|e| TensorError::Checkpoint(format!("manifest: {e}")))?;
        let payload = &rest[len..];

        let mut arrays = BTreeMap::new();
        for entry in manifest.arrays {
            let expected = entry.shape.iter().product::<usize>() * entry.dtype.size();
            if entry.length != expected {
                return Err(TensorError::Checkpoint(format!(
                    "array `{}`: {} bytes recorded for shape {:?}",
                    entry.name, entry.length, entry.shape
                )));
            }
            let end = entry.offset + entry.length;
            if end > payload.len() {
                return Err(TensorError::Checkpoint(format!(
                    "array `{}` runs past the end of the payload",
                    entry.name
                )));
            }
            arrays.insert(
                entry.name,
                Stored {
                    dtype: entry.dtype,
                    shape: entry.shape,
                    bytes: payload[entry.offset..end].to_vec(),
                },
            );
        }
        Ok(Self {
            arrays,
            text: manifest.text,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
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
    fn round_trips_mixed_precision_and_text() {
        let mut ck = Checkpoint::new();
        ck.insert("sbr.item_embeddings", &Tensor::from_vec([2, 2], vec![1.0f32, -2.5, 3.25, 0.0]));
        ck.insert("head.b", &Tensor::from_vec([3], vec![0.1f64, 0.2, 0.3]));
        ck.insert_text("vocab", vec!["a".into(), "b".into()]);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let t: Tensor<f64> = back.get("head.b").unwrap();
        assert_eq!(t.data(), &[0.1, 0.2, 0.3]);
        assert_eq!(back.text("vocab").unwrap(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn manifest_offsets_are_contiguous() {
        let mut ck = Checkpoint::new();
        ck.insert("a", &Tensor::<f32>::zeros([3]));
        ck.insert("b", &Tensor::<f64>::zeros([2, 2]));
        let m = ck.manifest();
        assert_eq!(m.arrays[0].offset, 0);
        assert_eq!(m.arrays[0].length, 12);
        assert_eq!(m.arrays[1].offset, 12);
        assert_eq!(m.arrays[1].length, 32);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(Checkpoint::from_bytes(b"nope\n1\n{}").is_err());
        let mut ck = Checkpoint::new();
        ck.insert("a", &Tensor::<f32>::zeros([4]));
        let mut bytes = ck.to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
