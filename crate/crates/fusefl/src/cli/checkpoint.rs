//! Checkpoint format: a fixed magic, a JSON manifest describing the
//! topology and tensor directory, and one contiguous little-endian f32 blob
//! whose SHA-256 digest is verified on load.
//!
//! Layout: `"FUSEFL01"` (8 bytes) | manifest length (u32 LE) | manifest JSON
//! | blob. Saving is canonical: save(load(save(x))) is byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    Adaptor, AdaptorKind, ClientModel, FusedBranch, FusedModel, FusedStage, ModelSpec, StagedModel,
};
use crate::nn::{FeatureShape, LayerParams, LayerSpec, ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"FUSEFL01";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    topology: Topology,
    tensors: Vec<TensorEntry>,
    blob_len: u64,
    blob_sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
enum Topology {
    Single {
        spec: ModelSpec,
    },
    Fused {
        input_shape: FeatureShape,
        client_order: Vec<usize>,
        adaptor_kind: AdaptorKind,
        stages: Vec<StageTopo>,
        classifier: Vec<LayerSpec>,
        num_classes: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct StageTopo {
    branches: Vec<BranchTopo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BranchTopo {
    adaptor: Option<AdaptorTopo>,
    block: Vec<LayerSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
enum AdaptorTopo {
    Average,
    LinearMix { layer: LayerSpec },
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob.
    offset: u64,
    /// Scalar count.
    len: u64,
    trainable: bool,
}

/// Anything the checkpoint format can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointModel {
    Single(ClientModel),
    Fused(FusedModel),
}

impl CheckpointModel {
    pub fn param_count(&self) -> usize {
        match self {
            CheckpointModel::Single(m) => m.spec.param_count(),
            CheckpointModel::Fused(m) => m.param_count(),
        }
    }
}

impl StagedModel for CheckpointModel {
    fn num_stages(&self) -> usize {
        match self {
            CheckpointModel::Single(m) => m.num_stages(),
            CheckpointModel::Fused(m) => m.num_stages(),
        }
    }
    fn input_shape(&self) -> &FeatureShape {
        match self {
            CheckpointModel::Single(m) => m.input_shape(),
            CheckpointModel::Fused(m) => m.input_shape(),
        }
    }
    fn stage_features(&self, x: &Tensor, k: usize) -> Result<Tensor> {
        match self {
            CheckpointModel::Single(m) => m.stage_features(x, k),
            CheckpointModel::Fused(m) => m.stage_features(x, k),
        }
    }
    fn stage_feature_shape(&self, k: usize) -> Result<FeatureShape> {
        match self {
            CheckpointModel::Single(m) => m.stage_feature_shape(k),
            CheckpointModel::Fused(m) => m.stage_feature_shape(k),
        }
    }
}

impl crate::federation::Predictor for CheckpointModel {
    fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            CheckpointModel::Single(m) => m.logits(x),
            CheckpointModel::Fused(m) => m.logits(x),
        }
    }
}

struct BlobWriter {
    entries: Vec<TensorEntry>,
    blob: Vec<u8>,
}

impl BlobWriter {
    fn new() -> Self {
        BlobWriter {
            entries: Vec::new(),
            blob: Vec::new(),
        }
    }

    fn push(&mut self, name: String, tensor: &Tensor, trainable: bool) {
        let offset = self.blob.len() as u64;
        for &v in tensor.values() {
            self.blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.entries.push(TensorEntry {
            name,
            shape: tensor.shape().to_vec(),
            offset,
            len: tensor.scalar_count() as u64,
            trainable,
        });
    }

    fn push_params(&mut self, prefix: &str, params: &ParamSet) {
        for (&idx, p) in params.iter() {
            self.push(format!("{prefix}layer{idx}.weight"), &p.weights, p.trainable);
            self.push(format!("{prefix}layer{idx}.bias"), &p.bias, p.trainable);
        }
    }
}

/// Serialize a model to checkpoint bytes.
pub fn checkpoint_bytes(model: &CheckpointModel) -> Result<Vec<u8>> {
    let mut w = BlobWriter::new();
    let topology = match model {
        CheckpointModel::Single(m) => {
            w.push_params("", &m.params);
            Topology::Single {
                spec: m.spec.clone(),
            }
        }
        CheckpointModel::Fused(m) => {
            let mut stages = Vec::with_capacity(m.stages.len());
            for (s, stage) in m.stages.iter().enumerate() {
                let mut branches = Vec::with_capacity(stage.branches.len());
                for (b, branch) in stage.branches.iter().enumerate() {
                    let prefix = format!("stage{}.branch{}.", s + 1, b);
                    let adaptor = match &branch.adaptor {
                        None => None,
                        Some(Adaptor::Average) => Some(AdaptorTopo::Average),
                        Some(Adaptor::LinearMix { layer, params }) => {
                            w.push(format!("{prefix}adaptor.weight"), &params.weights, false);
                            w.push(format!("{prefix}adaptor.bias"), &params.bias, false);
                            Some(AdaptorTopo::LinearMix {
                                layer: layer.clone(),
                            })
                        }
                    };
                    w.push_params(&format!("{prefix}block."), &branch.params);
                    branches.push(BranchTopo {
                        adaptor,
                        block: branch.block.clone(),
                    });
                }
                stages.push(StageTopo { branches });
            }
            w.push_params("classifier.", &m.classifier_params);
            Topology::Fused {
                input_shape: m.input_shape.clone(),
                client_order: m.client_order().to_vec(),
                adaptor_kind: m.adaptor_kind,
                stages,
                classifier: m.classifier.clone(),
                num_classes: m.num_classes,
            }
        }
    };
    let manifest = Manifest {
        format: String::from_utf8_lossy(MAGIC).to_string(),
        topology,
        tensors: w.entries,
        blob_len: w.blob.len() as u64,
        blob_sha256: hex(&Sha256::digest(&w.blob)),
    };
    let manifest_json = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Internal(format!("manifest serialization: {e}")))?;
    let mut out = Vec::with_capacity(12 + manifest_json.len() + w.blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    out.extend_from_slice(&w.blob);
    Ok(out)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn checkpoint_save(model: &CheckpointModel, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model)?)?;
    Ok(())
}

struct BlobReader<'a> {
    entries: &'a [TensorEntry],
    blob: &'a [u8],
    cursor: usize,
}

impl<'a> BlobReader<'a> {
    fn next(&mut self, want_name: &str) -> Result<(Tensor, bool)> {
        let entry = self.entries.get(self.cursor).ok_or_else(|| {
            Error::Checkpoint(format!("tensor directory exhausted looking for {want_name}"))
        })?;
        self.cursor += 1;
        if entry.name != want_name {
            return Err(Error::Checkpoint(format!(
                "tensor directory mismatch: expected {want_name}, found {}",
                entry.name
            )));
        }
        let start = entry.offset as usize;
        let end = start + entry.len as usize * 4;
        if end > self.blob.len() {
            return Err(Error::Checkpoint(format!(
                "truncated blob: {want_name} reaches {end} of {}",
                self.blob.len()
            )));
        }
        let mut values = Vec::with_capacity(entry.len as usize);
        for chunk in self.blob[start..end].chunks_exact(4) {
            values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
        }
        Ok((Tensor::new(entry.shape.clone(), values)?, entry.trainable))
    }

    fn read_params(&mut self, prefix: &str, layers: &[LayerSpec]) -> Result<ParamSet> {
        let mut params = ParamSet::default();
        for (idx, layer) in layers.iter().enumerate() {
            if !layer.has_params() {
                continue;
            }
            let (weights, trainable) = self.next(&format!("{prefix}layer{idx}.weight"))?;
            let (bias, _) = self.next(&format!("{prefix}layer{idx}.bias"))?;
            params.insert(
                idx,
                LayerParams {
                    weights,
                    bias,
                    trainable,
                },
            );
        }
        Ok(params)
    }
}

/// Parse checkpoint bytes, verifying the format version and blob digest.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<CheckpointModel> {
    if bytes.len() < 12 {
        return Err(Error::Checkpoint("truncated file: missing header".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "version mismatch: expected {:?}, found {:?}",
            String::from_utf8_lossy(MAGIC),
            String::from_utf8_lossy(&bytes[..8])
        )));
    }
    let manifest_len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    if bytes.len() < 12 + manifest_len {
        return Err(Error::Checkpoint("truncated file: manifest cut off".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[12..12 + manifest_len])
        .map_err(|e| Error::Checkpoint(format!("malformed manifest: {e}")))?;
    if manifest.format != String::from_utf8_lossy(MAGIC) {
        return Err(Error::Checkpoint(format!(
            "version mismatch: manifest says {}",
            manifest.format
        )));
    }
    let blob = &bytes[12 + manifest_len..];
    if blob.len() as u64 != manifest.blob_len {
        return Err(Error::Checkpoint(format!(
            "truncated file: blob holds {} bytes, manifest wants {}",
            blob.len(),
            manifest.blob_len
        )));
    }
    let digest = hex(&Sha256::digest(blob));
    if digest != manifest.blob_sha256 {
        return Err(Error::Checkpoint(format!(
            "digest mismatch: blob hashes to {digest}, manifest says {}",
            manifest.blob_sha256
        )));
    }

    let mut reader = BlobReader {
        entries: &manifest.tensors,
        blob,
        cursor: 0,
    };
    match manifest.topology {
        Topology::Single { spec } => {
            let params = reader.read_params("", &spec.flat_layers())?;
            Ok(CheckpointModel::Single(ClientModel { spec, params }))
        }
        Topology::Fused {
            input_shape,
            client_order,
            adaptor_kind,
            stages,
            classifier,
            num_classes,
        } => {
            let mut out_stages = Vec::with_capacity(stages.len());
            for (s, stage) in stages.into_iter().enumerate() {
                let mut branches = Vec::with_capacity(stage.branches.len());
                for (b, branch) in stage.branches.into_iter().enumerate() {
                    let prefix = format!("stage{}.branch{}.", s + 1, b);
                    let adaptor = match branch.adaptor {
                        None => None,
                        Some(AdaptorTopo::Average) => Some(Adaptor::Average),
                        Some(AdaptorTopo::LinearMix { layer }) => {
                            let (weights, _) = reader.next(&format!("{prefix}adaptor.weight"))?;
                            let (bias, _) = reader.next(&format!("{prefix}adaptor.bias"))?;
                            Some(Adaptor::LinearMix {
                                layer,
                                params: LayerParams {
                                    weights,
                                    bias,
                                    trainable: false,
                                },
                            })
                        }
                    };
                    let mut params = reader.read_params(&format!("{prefix}block."), &branch.block)?;
                    params.freeze_all();
                    branches.push(FusedBranch {
                        adaptor,
                        block: branch.block,
                        params,
                    });
                }
                out_stages.push(FusedStage {
                    branches,
                    client_order: client_order.clone(),
                });
            }
            let classifier_params = reader.read_params("classifier.", &classifier)?;
            let model = FusedModel {
                input_shape,
                stages: out_stages,
                adaptor_kind,
                classifier,
                classifier_params,
                num_classes,
            };
            model.validate()?;
            Ok(CheckpointModel::Fused(model))
        }
    }
}

pub fn checkpoint_load(path: &Path) -> Result<CheckpointModel> {
    let bytes =
        fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mlp_template;
    use crate::nn::init_params;

    fn single_model(seed: u64) -> CheckpointModel {
        let spec = mlp_template(6, 8, 2, 3);
        CheckpointModel::Single(ClientModel {
            params: init_params(&spec.flat_layers(), seed).unwrap(),
            spec,
        })
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let model = single_model(3);
        let first = checkpoint_bytes(&model).unwrap();
        let loaded = checkpoint_from_bytes(&first).unwrap();
        let second = checkpoint_bytes(&loaded).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn roundtrip_is_f32_exact() {
        let model = single_model(5);
        let bytes = checkpoint_bytes(&model).unwrap();
        let loaded = checkpoint_from_bytes(&bytes).unwrap();
        let (CheckpointModel::Single(a), CheckpointModel::Single(b)) = (&model, &loaded) else {
            panic!("expected single models");
        };
        for (idx, p) in a.params.iter() {
            let q = b.params.get(*idx).unwrap();
            for (x, y) in p.weights.values().iter().zip(q.weights.values()) {
                assert_eq!(*x as f32, *y as f32);
                assert_eq!(*y, (*y as f32) as f64);
            }
            assert_eq!(p.trainable, q.trainable);
        }
    }

    #[test]
    fn flipped_blob_byte_fails_digest() {
        let model = single_model(7);
        let mut bytes = checkpoint_bytes(&model).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        let err = checkpoint_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("digest mismatch"), "{err}");
    }

    #[test]
    fn wrong_magic_is_version_mismatch() {
        let model = single_model(7);
        let mut bytes = checkpoint_bytes(&model).unwrap();
        bytes[7] = b'9';
        let err = checkpoint_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version mismatch"), "{err}");
    }

    #[test]
    fn truncation_detected() {
        let model = single_model(7);
        let mut bytes = checkpoint_bytes(&model).unwrap();
        bytes.truncate(bytes.len() - 5);
        let err = checkpoint_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }
}
