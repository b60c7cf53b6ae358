//! `model.ckpt`: magic, manifest length (u64 LE), JSON manifest, f32 LE
//! tensor blobs, then a CRC32 of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelDims};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::schema::FeatureSchema;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RSQCKPT\0";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset from the start of the blob section.
    pub offset: u64,
    /// Length in bytes.
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub dims: ModelDims,
    pub task_names: Vec<String>,
    pub schema_hash: String,
    pub tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blobs = Vec::new();
        let mut tensors = Vec::new();
        for (name, t) in self.params.iter() {
            let offset = blobs.len() as u64;
            for &v in t.data() {
                blobs.extend_from_slice(&(v as f32).to_le_bytes());
            }
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset,
                length: blobs.len() as u64 - offset,
            });
        }
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config.clone(),
            dims: self.dims.clone(),
            task_names: self.task_names.clone(),
            schema_hash: self.schema_hash.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(8 + 8 + json.len() + blobs.len() + 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blobs);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let (manifest, blobs) = split(bytes)?;
        let mut params = ParamStore::new();
        for e in &manifest.tensors {
            if e.dtype != "f32" {
                return Err(corrupt(format!("`{}`: unsupported dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let (start, len) = (e.offset as usize, e.length as usize);
            if len != 4 * n || start.checked_add(len).is_none_or(|end| end > blobs.len()) {
                return Err(corrupt(format!("`{}`: blob out of bounds", e.name)));
            }
            let data = blobs[start..start + len]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            params.insert(&e.name, Tensor::new(e.shape.clone(), data)?);
        }
        let expected = Model::param_shapes(&manifest.config, &manifest.dims, &manifest.task_names);
        let actual: Vec<(&String, &[usize])> = params.iter().map(|(k, t)| (k, t.shape())).collect();
        let wanted: Vec<(&String, &[usize])> = expected.iter().map(|(k, s)| (k, s.as_slice())).collect();
        if actual != wanted {
            return Err(Error::Shape(
                "checkpoint tensors do not match the architecture in its manifest".into(),
            ));
        }
        Ok(Model {
            config: manifest.config,
            dims: manifest.dims,
            task_names: manifest.task_names,
            schema_hash: manifest.schema_hash,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes)
    }

    /// Loads a checkpoint and checks it was trained on `schema`.
    pub fn load_for(path: &Path, schema: &FeatureSchema) -> Result<Model> {
        let model = Model::load(path)?;
        if model.schema_hash != schema.hash() {
            return Err(Error::Schema(format!(
                "{} was trained on a different schema (hash {} vs {})",
                path.display(),
                short(&model.schema_hash),
                short(&schema.hash())
            )));
        }
        Ok(model)
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// Validates framing and checksum; returns the manifest and blob section.
fn split(bytes: &[u8]) -> Result<(CheckpointManifest, &[u8])> {
    if bytes.len() < 8 + 8 + 4 || &bytes[..8] != CHECKPOINT_MAGIC {
        if bytes.len() >= 8 && &bytes[..8] == CHECKPOINT_MAGIC {
            return Err(corrupt("checksum mismatch (file truncated)"));
        }
        return Err(corrupt("not a checkpoint file"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    let len = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    if 16 + len > body.len() {
        return Err(corrupt("manifest length exceeds file"));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&body[16..16 + len])?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(corrupt(format!(
            "format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    Ok((manifest, &body[16 + len..]))
}

/// Reads only the manifest, after verifying the checksum.
pub fn read_manifest(path: &Path) -> Result<CheckpointManifest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(split(&bytes)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{schema_with_dims, SchemaDims};

    fn small() -> (FeatureSchema, Model) {
        let schema = schema_with_dims(&SchemaDims {
            continuous: 6,
            binary: 2,
            onehot: 2,
            embedded: vec![21],
        })
        .unwrap();
        let cfg = ModelConfig { hidden: 4, conv_channels: 3, conv_layers: 2, ..Default::default() };
        let m = Model::build(&cfg, &schema, 5).unwrap();
        (schema, m)
    }

    #[test]
    fn round_trip_at_f32_precision() {
        let (_, m) = small();
        let back = Model::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back.config, m.config);
        for (name, t) in m.params.iter() {
            let b = back.params.get(name).unwrap();
            for (x, y) in t.data().iter().zip(b.data()) {
                assert_eq!(*y, f64::from(*x as f32));
            }
        }
        assert_eq!(Model::from_bytes(&back.to_bytes()).unwrap(), back);
    }

    #[test]
    fn corruption_is_detected() {
        let (_, m) = small();
        let bytes = m.to_bytes();
        let err = Model::from_bytes(&bytes[..bytes.len() - 10]).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(Model::from_bytes(&flipped).unwrap_err().to_string().contains("checksum"));
        assert!(Model::from_bytes(b"garbage").is_err());
    }

    #[test]
    fn version_and_schema_checks() {
        let (schema, m) = small();
        let bytes = m.to_bytes();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let text = String::from_utf8(bytes[16..16 + len].to_vec()).unwrap();
        let text = text.replace("\"format_version\":1", "\"format_version\":7");
        let mut forged = Vec::new();
        forged.extend_from_slice(CHECKPOINT_MAGIC);
        forged.extend_from_slice(&(text.len() as u64).to_le_bytes());
        forged.extend_from_slice(text.as_bytes());
        forged.extend_from_slice(&bytes[16 + len..bytes.len() - 4]);
        let crc = crc32fast::hash(&forged);
        forged.extend_from_slice(&crc.to_le_bytes());
        assert!(Model::from_bytes(&forged).unwrap_err().to_string().contains("version"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        m.save(&path).unwrap();
        assert!(Model::load_for(&path, &schema).is_ok());
        let other = crate::schema::default_schema();
        let err = Model::load_for(&path, &other).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        assert_eq!(read_manifest(&path).unwrap().tensors.len(), m.params.len());
    }
}
