//! Checkpoint files: magic, header length, JSON header, little-endian f32
//! parameter blob.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{LabelVocabulary, MaterialCatalog};
use crate::encoding::{EmbeddingTable, FeatureSchema, FittedState};
use crate::error::{Error, Result};
use crate::graph::Guidance;
use crate::model::{BnBuffers, Model, ModelConfig};
use crate::optim::ParamSet;
use crate::tensor::Tensor;
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 4] = b"MGCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the blob.
    pub byte_offset: usize,
    /// Number of f32 values.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub train_config: TrainConfig,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_micro_f1: f64,
    pub epochs_run: usize,
    #[serde(default)]
    pub guidance: Guidance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub schema: FeatureSchema,
    pub labels: LabelVocabulary,
    pub fitted: FittedState,
    pub catalog: Option<MaterialCatalog>,
    pub training: Option<TrainingMeta>,
    pub batch_norm: BnBuffers<f32>,
    /// Name embeddings, needed to encode raw assemblies at inference time.
    #[serde(default)]
    pub semantic: Option<EmbeddingTable>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    tensors: Vec<TensorEntry>,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamSet<f32>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model<f32>,
        schema: FeatureSchema,
        fitted: FittedState,
        catalog: Option<MaterialCatalog>,
        training: Option<TrainingMeta>,
    ) -> Self {
        Self {
            meta: CheckpointMeta {
                model: model.config.clone(),
                schema,
                labels: fitted.labels.clone(),
                fitted,
                catalog,
                training,
                batch_norm: model.buffers.clone(),
                semantic: None,
            },
            params: model.params.clone(),
        }
    }

    pub fn with_semantic(mut self, table: EmbeddingTable) -> Self {
        self.meta.semantic = Some(table);
        self
    }

    /// Rebuilds the model, checking every parameter against a fresh init.
    pub fn model(&self) -> Result<Model<f32>> {
        let mut model = Model::<f32>::init(self.meta.model.clone())?;
        if model.params.names() != self.params.names() {
            return Err(Error::Checkpoint("parameter names do not match the model config".into()));
        }
        for (dst, src) in model.params.tensors_mut().iter_mut().zip(self.params.tensors()) {
            if dst.shape() != src.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter shape {:?} where the config needs {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        model.buffers = self.meta.batch_norm.clone();
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut blob = Vec::new();
        let mut offset = 0;
        for (name, t) in self.params.iter() {
            let (r, c) = t.shape();
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: [r, c],
                byte_offset: offset,
                len: r * c,
            });
            offset += 4 * r * c;
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = serde_json::to_vec(&Header {
            version: FORMAT_VERSION,
            tensors,
            meta: self.meta.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&blob);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body = &bytes[12..];
        if header_len > body.len() {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
        }
        let blob = &body[header_len..];
        if blob.len() % 4 != 0 {
            return Err(bad("blob length is not a multiple of 4"));
        }
        let values: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let mut params = ParamSet::new();
        for e in &header.tensors {
            let start = e.byte_offset / 4;
            let end = start.checked_add(e.len).filter(|&end| e.byte_offset % 4 == 0 && end <= values.len());
            let Some(end) = end else {
                return Err(Error::Checkpoint(format!("tensor {} runs past the blob", e.name)));
            };
            if e.shape[0] * e.shape[1] != e.len {
                return Err(Error::Checkpoint(format!("tensor {} shape disagrees with length", e.name)));
            }
            let t = Tensor::new(e.shape[0], e.shape[1], values[start..end].to_vec())?;
            params.insert(e.name.clone(), t);
        }
        Ok(Self {
            meta: header.meta,
            params,
        })
    }

    /// Short content hash.
    pub fn id(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
