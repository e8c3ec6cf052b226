//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `UCCACKPT`, a little-endian `u32` version, a
//! little-endian `u64` metadata length, the metadata as JSON, then every
//! tensor listed in the metadata as row-major little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::Vocabularies;
use crate::error::{Error, Result};
use crate::label::LabelInventory;
use crate::model::{Model, ModelConfig};
use crate::nn::Params;

const MAGIC: &[u8; 8] = b"UCCACKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    /// Hex SHA-256 of the JSON-serialized model config.
    pub config_hash: String,
    pub labels: LabelInventory,
    pub vocabs: Vocabularies,
    pub tensors: Vec<TensorMeta>,
}

pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_string(config).expect("configs serialize");
    Sha256::digest(json.as_bytes())
        .iter()
        .map(|b| format!("{:02x}", b))
        .collect()
}

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint(format!("{}: {}", path.display(), msg.into()))
}

/// Serializes a model to bytes.
pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let mut tensors = Vec::new();
    model.visit("", &mut |name, p| {
        tensors.push(TensorMeta {
            name,
            rows: p.value.nrows(),
            cols: p.value.ncols(),
        })
    });
    let meta = CheckpointMeta {
        config: model.config.clone(),
        config_hash: config_hash(&model.config),
        labels: model.labels.clone(),
        vocabs: model.vocabs.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&meta).expect("checkpoint metadata serializes");
    let mut out = Vec::with_capacity(json.len() + 8 * model.size() + 20);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    model.visit("", &mut |_, p| {
        for &x in p.value.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    });
    out
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let bytes = checkpoint_bytes(model);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn parse(path: &Path, bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(path, format!("unsupported checkpoint version {}", version)));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let json = bytes
        .get(20..20 + len)
        .ok_or_else(|| bad(path, "truncated metadata"))?;
    let meta: CheckpointMeta = serde_json::from_slice(json).map_err(|e| bad(path, e.to_string()))?;
    if config_hash(&meta.config) != meta.config_hash {
        return Err(bad(path, "config hash does not match the stored config"));
    }
    let mut model = Model::new(meta.config, meta.vocabs, meta.labels, 0)?;

    let mut expected = Vec::new();
    model.visit("", &mut |name, p| {
        expected.push(TensorMeta {
            name,
            rows: p.value.nrows(),
            cols: p.value.ncols(),
        })
    });
    if expected != meta.tensors {
        let first = expected
            .iter()
            .zip(&meta.tensors)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!(": `{}` is {}x{} in the file, {}x{} in the model", b.name, b.rows, b.cols, a.rows, a.cols))
            .unwrap_or_default();
        return Err(bad(
            path,
            format!("tensors do not match the label inventory and config{}", first),
        ));
    }
    let data = &bytes[20 + len..];
    let total: usize = expected.iter().map(|t| t.rows * t.cols).sum();
    if data.len() != 8 * total {
        return Err(bad(path, format!("expected {} bytes of weights, found {}", 8 * total, data.len())));
    }
    let mut chunks = data.chunks_exact(8);
    model.visit_mut("", &mut |_, p| {
        for x in p.value.iter_mut() {
            *x = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
        }
    });
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse(path, &bytes)
}

/// Loads a checkpoint and checks its label inventory against `labels`.
pub fn load_checkpoint_expecting(path: &Path, labels: &LabelInventory) -> Result<Model> {
    let model = load_checkpoint(path)?;
    if model.labels != *labels {
        return Err(bad(
            path,
            format!(
                "label inventory mismatch: checkpoint has {} labels, expected {}",
                model.labels.len(),
                labels.len()
            ),
        ));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversion::graph_to_tree;
    use crate::encoder::EmbeddingDims;
    use crate::synthetic::{figure_one, toy_corpus};

    fn model(seed: u64) -> Model {
        let config = ModelConfig {
            embeddings: EmbeddingDims {
                word: 4,
                pos: 2,
                dep: 2,
                entity: 2,
                iob: 2,
            },
            d_model: 16,
            d_ff: 16,
            span_hidden: 8,
            remote_hidden: 8,
            ..ModelConfig::default()
        };
        let toy = toy_corpus();
        let trees: Vec<_> = toy
            .iter()
            .map(|p| graph_to_tree(p.graph.as_ref().unwrap()).unwrap().tree)
            .collect();
        let labels = Model::label_inventory(&config, &trees);
        let vocabs = Vocabularies::build(toy.iter().flat_map(|p| &p.terminals));
        Model::new(config, vocabs, labels, seed).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model(5);
        save_checkpoint(&path, &m).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(checkpoint_bytes(&back), checkpoint_bytes(&m));
        let p = figure_one();
        let a = m.parse(&p, None, m.parse_options()).unwrap();
        let b = back.parse(&p, None, back.parse_options()).unwrap();
        assert_eq!(a.passage, b.passage);
    }

    #[test]
    fn label_inventory_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model(5);
        save_checkpoint(&path, &m).unwrap();
        let fewer = LabelInventory::from_labels(m.labels.iter().take(3));
        assert!(matches!(load_checkpoint_expecting(&path, &fewer), Err(Error::Checkpoint(_))));
        let fewer = LabelInventory::from_labels(m.labels.iter().take(3));
        assert!(load_checkpoint_expecting(&path, &m.labels).is_ok());

        let bytes = checkpoint_bytes(&m);
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let mut meta: CheckpointMeta = serde_json::from_slice(&bytes[20..20 + len]).unwrap();
        meta.labels = fewer;
        let json = serde_json::to_vec(&meta).unwrap();
        let mut edited = bytes[..12].to_vec();
        edited.extend_from_slice(&(json.len() as u64).to_le_bytes());
        edited.extend_from_slice(&json);
        edited.extend_from_slice(&bytes[20 + len..]);
        let err = parse(&path, &edited).unwrap_err();
        assert!(err.to_string().contains("label inventory"), "{}", err);
    }

    #[test]
    fn rejects_corruption() {
        let m = model(1);
        let bytes = checkpoint_bytes(&m);
        let p = Path::new("x");
        assert!(parse(p, &bytes[..bytes.len() - 8]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(parse(p, &wrong).is_err());
        assert!(config_hash(&m.config).len() == 64);
    }
}
