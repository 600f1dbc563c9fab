//! Checkpoint files in the safetensors layout.
//!
//! `u64` little-endian header length, a JSON header mapping each tensor name
//! to `{dtype, shape, data_offsets}` plus a `__metadata__` string map, then
//! the raw little-endian tensor bytes in header order. Any safetensors reader
//! can open these files; the `config` metadata entry echoes the model
//! configuration as JSON.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::module::{Module, TensorMut};
use crate::real::Real;
use crate::tensor::Tensor;

pub const FORMAT_TAG: &str = "mtnet-checkpoint";
pub const FORMAT_VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// One stored tensor, kept as `f64` regardless of the on-disk dtype.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub dtype: String,
    pub shape: [usize; 4],
    pub values: Vec<f64>,
}

/// An in-memory checkpoint: named tensors plus string metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    /// Captures every parameter and buffer of `module` under `prefix`.
    pub fn capture<T: Real, M: Module<T> + ?Sized>(&mut self, prefix: &str, module: &M) {
        let tensors = &mut self.tensors;
        module.visit(prefix, &mut |name, t| {
            let t = t.tensor();
            tensors.insert(
                name.to_string(),
                TensorRecord {
                    dtype: T::DTYPE.to_string(),
                    shape: t.shape(),
                    values: t.data().iter().map(|v| v.as_f64()).collect(),
                },
            );
        });
    }

    /// Writes tensors named `prefix.*` back into `module`.
    ///
    /// Every tensor of the module must be present with a matching shape.
    pub fn restore<T: Real, M: Module<T> + ?Sized>(&self, prefix: &str, module: &mut M) -> Result<()> {
        let mut missing = Vec::new();
        let mut mismatched = Vec::new();
        module.visit_mut(prefix, &mut |name, mut t| {
            let dst = t.tensor_mut();
            match self.tensors.get(name) {
                None => missing.push(name.to_string()),
                Some(rec) if rec.shape != dst.shape() => {
                    mismatched.push(format!("{name}: stored {:?}, expected {:?}", rec.shape, dst.shape()))
                }
                Some(rec) => {
                    for (d, &v) in dst.data_mut().iter_mut().zip(&rec.values) {
                        *d = T::of(v);
                    }
                    if let TensorMut::Param(p) = t {
                        p.zero_grad();
                    }
                }
            }
        });
        if !missing.is_empty() || !mismatched.is_empty() {
            let mut parts = Vec::new();
            if !missing.is_empty() {
                parts.push(format!("missing tensors: {}", missing.join(", ")));
            }
            if !mismatched.is_empty() {
                parts.push(format!("shape mismatches: {}", mismatched.join("; ")));
            }
            return Err(NnError::Checkpoint(parts.join("; ")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.get(name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = serde_json::Map::new();
        let mut meta = self.metadata.clone();
        meta.insert("format".into(), FORMAT_TAG.into());
        meta.insert("format_version".into(), FORMAT_VERSION.into());
        header.insert("__metadata__".into(), serde_json::to_value(&meta)?);
        let mut body = Vec::new();
        for (name, rec) in &self.tensors {
            let start = body.len();
            for &v in &rec.values {
                match rec.dtype.as_str() {
                    "F32" => (v as f32).write_le(&mut body),
                    "F64" => v.write_le(&mut body),
                    other => return Err(NnError::Checkpoint(format!("unsupported dtype {other}"))),
                }
            }
            let entry = HeaderEntry {
                dtype: rec.dtype.clone(),
                shape: rec.shape.to_vec(),
                data_offsets: [start, body.len()],
            };
            header.insert(name.clone(), serde_json::to_value(entry)?);
        }
        let mut header_bytes = serde_json::to_vec(&serde_json::Value::Object(header))?;
        // pad so tensor data starts 8-byte aligned
        while header_bytes.len() % 8 != 0 {
            header_bytes.push(b' ');
        }
        let mut out = Vec::with_capacity(8 + header_bytes.len() + body.len());
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| NnError::Checkpoint(msg.to_string());
        if bytes.len() < 8 {
            return Err(bad("file shorter than the header length prefix"));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let header_end = 8usize.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: serde_json::Map<String, serde_json::Value> = serde_json::from_slice(&bytes[8..header_end])?;
        let body = &bytes[header_end..];
        let mut ckpt = Checkpoint::default();
        for (name, value) in header {
            if name == "__metadata__" {
                ckpt.metadata = serde_json::from_value(value)?;
                continue;
            }
            let entry: HeaderEntry = serde_json::from_value(value)?;
            let width = match entry.dtype.as_str() {
                "F32" => 4,
                "F64" => 8,
                other => return Err(NnError::Checkpoint(format!("{name}: unsupported dtype {other}"))),
            };
            let [start, end] = entry.data_offsets;
            if end < start || end > body.len() {
                return Err(NnError::Checkpoint(format!("{name}: data offsets out of range")));
            }
            let raw = &body[start..end];
            let count: usize = entry.shape.iter().product();
            if raw.len() != count * width || entry.shape.len() > 4 {
                return Err(NnError::Checkpoint(format!("{name}: size does not match shape {:?}", entry.shape)));
            }
            let mut shape = [1usize; 4];
            shape[..entry.shape.len()].copy_from_slice(&entry.shape);
            let values = raw
                .chunks_exact(width)
                .map(|c| if width == 4 { f32::read_le(c) as f64 } else { f64::read_le(c) })
                .collect();
            ckpt.tensors.insert(name, TensorRecord { dtype: entry.dtype, shape, values });
        }
        if ckpt.metadata.get("format").map(String::as_str) != Some(FORMAT_TAG) {
            return Err(bad("not an mtnet checkpoint (missing format tag)"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Convenience: builds a tensor from a record.
impl TensorRecord {
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(self.shape, self.values.iter().map(|&v| T::of(v)).collect())
            .expect("record shape matches values")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ConvBnRelu;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = ConvBnRelu::<f32>::new(3, 4, 3, &mut rng);
        let mut ck = Checkpoint::default();
        ck.metadata.insert("config".into(), "{\"a\":1}".into());
        ck.capture("blk", &block);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.metadata["config"], "{\"a\":1}");
        let mut other = ConvBnRelu::<f32>::new(3, 4, 3, &mut rng);
        back.restore("blk", &mut other).unwrap();
        assert_eq!(other.conv.weight.value, block.conv.weight.value);
        assert_eq!(other.norm.running_var, block.norm.running_var);
    }

    #[test]
    fn restore_reports_missing_and_mismatched() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ck = Checkpoint::default();
        ck.capture("blk", &ConvBnRelu::<f32>::new(3, 4, 3, &mut rng));
        let mut wrong = ConvBnRelu::<f32>::new(3, 8, 3, &mut rng);
        let err = ck.restore("blk", &mut wrong).unwrap_err().to_string();
        assert!(err.contains("blk.conv.weight"), "{err}");
        let err = ck.restore("other", &mut wrong).unwrap_err().to_string();
        assert!(err.contains("missing tensors"), "{err}");
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(&[1, 2, 3]).is_err());
        let mut bytes = 4u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{}  ");
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
