//! Single-file binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "VEGN" | version: u32 | metadata length: u64 | metadata (JSON)
//!        | tensor payloads (f64, declared order) | SHA-256 of everything before
//! ```
//!
//! The metadata carries the model configuration, parameter names and shapes,
//! random-feature projection shapes, the seed, and the graph the model was
//! trained on so that new variants can be scored against it.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, VariantRecord};
use crate::layers::{Mode, Model, ModelConfig};
use crate::tensor::Tensor;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"VEGN";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const PREFIX_LEN: usize = 4 + 4 + 8;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    mode: Mode,
    model_config: ModelConfig,
    gene_count: usize,
    feature_dim: usize,
    seed: u64,
    train_config: Option<TrainConfig>,
    feature_names: Vec<String>,
    tensors: Vec<TensorEntry>,
    omegas: Vec<Vec<usize>>,
    genes: Vec<String>,
    gene_edges: Vec<(String, String, f64)>,
    variants: Vec<VariantRecord>,
}

/// A trained model together with the graph it was trained on.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub graph: HeteroGraph,
    pub feature_names: Vec<String>,
    pub train_config: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let model = &self.model;
        let omegas = model.omegas();
        let meta = Metadata {
            mode: model.mode,
            model_config: model.config.clone(),
            gene_count: model.gene_count,
            feature_dim: model.feature_dim,
            seed: model.seed,
            train_config: self.train_config.clone(),
            feature_names: self.feature_names.clone(),
            tensors: model
                .store
                .iter()
                .map(|p| TensorEntry {
                    name: p.name().to_string(),
                    shape: p.value().shape().to_vec(),
                })
                .collect(),
            omegas: omegas.iter().map(|o| o.shape().to_vec()).collect(),
            genes: self.graph.genes().to_vec(),
            gene_edges: self.graph.gene_edge_triples(),
            variants: self.graph.variants().to_vec(),
        };
        let json = serde_json::to_vec(&meta)?;
        let payload: usize = model.store.num_elements() + omegas.iter().map(|o| o.len()).sum::<usize>();
        let mut bytes = Vec::with_capacity(PREFIX_LEN + json.len() + 8 * payload + DIGEST_LEN);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        let tensors = model.store.iter().map(|p| p.value()).chain(omegas.iter().map(|o| o.as_ref()));
        for t in tensors {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(digest.as_slice());
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Integrity("missing checkpoint magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::IncompatibleVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < PREFIX_LEN + DIGEST_LEN {
            return Err(Error::Integrity(format!("file truncated to {} bytes", bytes.len())));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity("checksum mismatch (truncated or corrupted file)".into()));
        }
        let meta_len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let meta_end = PREFIX_LEN
            .checked_add(meta_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| Error::Integrity("metadata length exceeds file".into()))?;
        let meta: Metadata = serde_json::from_slice(&body[PREFIX_LEN..meta_end])
            .map_err(|e| Error::Integrity(format!("unreadable metadata: {e}")))?;

        let mut values = body[meta_end..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let count = |shape: &[usize]| shape.iter().product::<usize>();
        let expected: usize = meta.tensors.iter().map(|t| count(&t.shape)).sum::<usize>()
            + meta.omegas.iter().map(|s| count(s)).sum::<usize>();
        if (body.len() - meta_end) != 8 * expected {
            return Err(Error::Integrity(format!(
                "payload holds {} bytes, metadata declares {} values",
                body.len() - meta_end,
                expected
            )));
        }
        let mut read = |shape: &[usize]| -> Result<Tensor> {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), values.by_ref().take(n).collect())
        };

        let mut model = Model::new(meta.mode, meta.model_config, meta.gene_count, meta.feature_dim, meta.seed)?;
        if model.store.len() != meta.tensors.len() {
            return Err(Error::Integrity(format!(
                "checkpoint declares {} tensors, model has {}",
                meta.tensors.len(),
                model.store.len()
            )));
        }
        for (param, entry) in model.store.iter_mut().zip(&meta.tensors) {
            if param.name() != entry.name {
                return Err(Error::Integrity(format!("expected tensor {}, found {}", param.name(), entry.name)));
            }
            param
                .assign(read(&entry.shape)?)
                .map_err(|e| Error::Integrity(format!("tensor {}: {e}", entry.name)))?;
        }
        let omegas = meta.omegas.iter().map(|s| read(s)).collect::<Result<Vec<_>>>()?;
        model
            .set_omegas(omegas)
            .map_err(|e| Error::Integrity(format!("random-feature projections: {e}")))?;

        let graph = HeteroGraph::build(&meta.variants, &meta.gene_edges, &meta.genes)?;
        Ok(Self {
            model,
            graph,
            feature_names: meta.feature_names,
            train_config: meta.train_config,
        })
    }

    /// Writes to a temporary file beside `path`, then renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
