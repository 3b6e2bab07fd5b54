//! Single-file model container shared by every trained model.
//!
//! Layout: 8-byte magic `PSCKPT\0\x01`, little-endian `u64` header length, a
//! JSON header, then all tensors as little-endian `f32` values. The header
//! carries `format_version`, a model-kind tag, model metadata (resolution,
//! latent size, training stage, config) and a table of tensor names, shapes
//! and offsets.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::Layer;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"PSCKPT\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    #[serde(flatten)]
    meta: Map<String, Value>,
    tensors: Vec<TensorEntry>,
}

/// In-memory checkpoint: kind tag, metadata and named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Map<String, Value>,
    tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn new(kind: &str, meta: Map<String, Value>) -> Self {
        Self { kind: kind.to_string(), meta, tensors: BTreeMap::new() }
    }

    pub fn add_module(&mut self, prefix: &str, module: &dyn Layer) {
        module.visit_params_ref(prefix, &mut |name, p| {
            self.tensors.insert(name.to_string(), (p.shape.clone(), p.value.clone()));
        });
    }

    pub fn add_tensor(&mut self, name: &str, shape: Vec<usize>, values: Vec<f32>) {
        self.tensors.insert(name.to_string(), (shape, values));
    }

    pub fn tensor(&self, name: &str) -> Option<&(Vec<usize>, Vec<f32>)> {
        self.tensors.get(name)
    }

    /// Copies stored values into `module`; every parameter must be present
    /// with a matching shape.
    pub fn load_module(&self, prefix: &str, module: &mut dyn Layer) -> Result<()> {
        let mut err = None;
        module.visit_params(prefix, &mut |name, p| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(name) {
                Some((shape, values)) if *shape == p.shape => p.value.copy_from_slice(values),
                Some((shape, _)) => {
                    err = Some(Error::Format(format!("tensor {name}: shape {shape:?} != {:?}", p.shape)))
                }
                None => err = Some(Error::Format(format!("checkpoint lacks tensor {name}"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| Error::Format(format!("checkpoint metadata lacks `{key}`")))
    }

    pub fn expect_kind(&self, kinds: &[&str]) -> Result<()> {
        if kinds.contains(&self.kind.as_str()) {
            Ok(())
        } else {
            Err(Error::WrongModel { expected: kinds.join("|"), actual: self.kind.clone() })
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, (shape, values)) in &self.tensors {
            entries.push(TensorEntry { name: name.clone(), shape: shape.clone(), offset });
            offset += values.len();
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset * 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, values) in self.tensors.values() {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| Error::Format("truncated header".into()))?;
        let raw: Value = serde_json::from_slice(body)?;
        let version = raw.get("format_version").and_then(Value::as_u64);
        if version != Some(FORMAT_VERSION as u64) {
            return Err(Error::Format(format!(
                "unsupported checkpoint format_version {version:?}, expected {FORMAT_VERSION}"
            )));
        }
        let header: Header = serde_json::from_value(raw)?;
        let payload = &bytes[16 + hlen..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let span = payload
                .get(e.offset * 4..(e.offset + n) * 4)
                .ok_or_else(|| Error::Format(format!("tensor {} out of bounds", e.name)))?;
            let values = span.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.insert(e.name, (e.shape, values));
        }
        Ok(Self { kind: header.kind, meta: header.meta, tensors })
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the serialized bytes, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_restores_module() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Linear::new(4, 3, &mut rng);
        let mut meta = Map::new();
        meta.insert("d".into(), 4.into());
        let mut ck = Checkpoint::new("test", meta);
        ck.add_module("lin.", &a);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta_usize("d").unwrap(), 4);

        let mut b = Linear::new(4, 3, &mut ChaCha8Rng::seed_from_u64(10));
        back.load_module("lin.", &mut b).unwrap();
        let x = Tensor::new(vec![1, 4], vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(a.forward(&x), b.forward(&x));
        assert_eq!(ck.digest(), back.digest());
    }

    #[test]
    fn rejects_other_format_versions() {
        let ck = Checkpoint::new("test", Map::new());
        let bytes = ck.to_bytes();
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let text = String::from_utf8(bytes[16..16 + hlen].to_vec()).unwrap();
        let patched = text.replace("\"format_version\":1", "\"format_version\":2");
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(patched.len() as u64).to_le_bytes());
        out.extend_from_slice(patched.as_bytes());
        assert!(matches!(Checkpoint::from_bytes(&out), Err(Error::Format(_))));
    }

    #[test]
    fn missing_tensor_is_an_error() {
        let ck = Checkpoint::new("test", Map::new());
        let mut lin = Linear::new(2, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(ck.load_module("", &mut lin).is_err());
    }
}
