//! Binary container shared by classifier models and block encoders.
//!
//! Layout (all integers little-endian):
//! `"DLVA"`, u16 version, u32 metadata length, metadata JSON, u32 tensor
//! count, then per tensor: u16 name length, name, u8 rank, u32 extents,
//! f32 values. A SHA-256 of everything before it closes the file.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{Architecture, CoreClassifier, ModelError, VulnerabilityModel};
use crate::n2v::{DanEncoder, TokenVocab};
use crate::nn::Tensor;
use crate::sc2v::{Sc2vWeights, SizeClass};

pub const MAGIC: &[u8; 4] = b"DLVA";
pub const FORMAT_VERSION: u16 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| ModelError::Malformed(e.to_string()))?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len()).map_err(|_| ModelError::Malformed(format!("name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(bytes);
            out.push(t.shape().len() as u8);
            for &e in t.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Checks magic, then version, then checksum, then structure.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(ModelError::BadMagic);
        }
        if bytes.len() < 6 {
            return Err(ModelError::ChecksumMismatch);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(ModelError::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        if bytes.len() < 6 + DIGEST_LEN {
            return Err(ModelError::ChecksumMismatch);
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(ModelError::ChecksumMismatch);
        }
        let mut r = Reader { bytes: body, pos: 6 };
        let meta_len = r.u32()? as usize;
        let metadata = serde_json::from_slice(r.take(meta_len)?).map_err(|e| ModelError::Malformed(e.to_string()))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|e| ModelError::Malformed(e.to_string()))?.to_string();
            let rank = r.take(1)?[0] as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_, _>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| ModelError::Malformed("tensor too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        if r.pos != body.len() {
            return Err(ModelError::Malformed("trailing bytes after tensors".into()));
        }
        Ok(Container { metadata, tensors })
    }

    fn lookup(&self) -> HashMap<String, Tensor<f32>> {
        self.tensors.iter().cloned().collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelError::Malformed("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn write_container(path: &Path, container: &Container) -> Result<(), ModelError> {
    Ok(std::fs::write(path, container.to_bytes()?)?)
}

pub fn read_container(path: &Path) -> Result<Container, ModelError> {
    Container::from_bytes(&std::fs::read(path)?)
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    vulnerability: String,
    size_class: SizeClass,
    architecture: Architecture,
    threshold: f64,
    seed: u64,
    encoder_ref: String,
}

fn model_container(model: &VulnerabilityModel) -> Container {
    let meta = ModelMeta {
        kind: "vulnerability-model".into(),
        vulnerability: model.vulnerability.clone(),
        size_class: model.size_class,
        architecture: model.architecture(),
        threshold: model.threshold,
        seed: model.seed,
        encoder_ref: model.encoder_ref.clone(),
    };
    let mut tensors: Vec<(String, Tensor<f32>)> =
        model.sc2v.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
    tensors.extend(model.cc.named_tensors());
    Container { metadata: serde_json::to_value(meta).expect("metadata serializes"), tensors }
}

pub fn model_to_bytes(model: &VulnerabilityModel) -> Result<Vec<u8>, ModelError> {
    model_container(model).to_bytes()
}

pub fn save_model(model: &VulnerabilityModel, path: &Path) -> Result<(), ModelError> {
    write_container(path, &model_container(model))
}

pub fn model_from_container(container: &Container) -> Result<VulnerabilityModel, ModelError> {
    let meta: ModelMeta =
        serde_json::from_value(container.metadata.clone()).map_err(|e| ModelError::Malformed(e.to_string()))?;
    if meta.kind != "vulnerability-model" {
        return Err(ModelError::Malformed(format!("expected a vulnerability model, found {:?}", meta.kind)));
    }
    let map = container.lookup();
    let sc2v = Sc2vWeights::from_named_tensors(meta.architecture.sc2v.clone(), |n| map.get(n).cloned())?;
    let cc = CoreClassifier::from_named_tensors(meta.architecture.cc.clone(), |n| map.get(n).cloned())
        .ok_or_else(|| ModelError::Malformed("missing classifier tensors".into()))?;
    Ok(VulnerabilityModel {
        vulnerability: meta.vulnerability,
        size_class: meta.size_class,
        sc2v,
        cc,
        encoder_ref: meta.encoder_ref,
        threshold: meta.threshold,
        seed: meta.seed,
    })
}

pub fn load_model(path: &Path) -> Result<VulnerabilityModel, ModelError> {
    model_from_container(&read_container(path)?)
}

/// Short content hash identifying an encoder's weights.
pub fn encoder_fingerprint(encoder: &DanEncoder) -> String {
    let mut h = Sha256::new();
    for (name, t) in encoder.named_tensors() {
        h.update(name.as_bytes());
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..8])
}

pub fn save_encoder(encoder: &DanEncoder, vocab: &TokenVocab, path: &Path) -> Result<(), ModelError> {
    let metadata = json!({
        "kind": "n2v-encoder",
        "fingerprint": encoder_fingerprint(encoder),
        "vocab": vocab.tokens(),
    });
    let tensors = encoder.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
    write_container(path, &Container { metadata, tensors })
}

pub fn load_encoder(path: &Path) -> Result<(DanEncoder, TokenVocab), ModelError> {
    let c = read_container(path)?;
    if c.metadata.get("kind").and_then(|k| k.as_str()) != Some("n2v-encoder") {
        return Err(ModelError::Malformed("not an encoder file".into()));
    }
    let tokens: Vec<String> = serde_json::from_value(c.metadata["vocab"].clone())
        .map_err(|e| ModelError::Malformed(format!("vocabulary: {e}")))?;
    let vocab = TokenVocab::from_tokens(tokens).map_err(|e| ModelError::Malformed(e.to_string()))?;
    let map = c.lookup();
    let encoder = DanEncoder::from_named_tensors(|n| map.get(n).cloned())
        .ok_or_else(|| ModelError::Malformed("missing encoder tensors".into()))?;
    if encoder.vocab_size() != vocab.len() {
        return Err(ModelError::Malformed("vocabulary size does not match embedding table".into()));
    }
    Ok((encoder, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        Container {
            metadata: json!({"kind": "test"}),
            tensors: vec![("a".into(), Tensor::from_vec(&[2, 2], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5]).unwrap())],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back.metadata, c.metadata);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.tensors[0].1), bits(&c.tensors[0].1));
    }

    #[test]
    fn check_order() {
        let bytes = sample().to_bytes().unwrap();
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(Container::from_bytes(&wrong_magic), Err(ModelError::BadMagic)));
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(matches!(Container::from_bytes(&wrong_version), Err(ModelError::VersionMismatch { found: 9, .. })));
        assert!(matches!(Container::from_bytes(&bytes[..bytes.len() - 5]), Err(ModelError::ChecksumMismatch)));
        let mut flipped = bytes.clone();
        flipped[20] ^= 1;
        assert!(matches!(Container::from_bytes(&flipped), Err(ModelError::ChecksumMismatch)));
    }
}
