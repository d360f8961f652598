//! Model structure: block decomposition, width scaling, stage fusion and
//! adaptors.

pub mod adaptor;
pub mod fusion;
pub mod scaling;
pub mod template;

pub use adaptor::{make_adaptor, Adaptor, AdaptorKind};
pub use fusion::{combine_branches, fuse_stage, run_stages, FusedBranch, FusedModel, FusedStage};
pub use scaling::{build_client_spec, scale_width, ScalingPolicy};
pub use template::{conv_template, mlp_template};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    check_spec, count_params, forward_only, FeatureShape, LayerSpec, ParamSet, Tensor,
};

/// A contiguous group of layers trained and fused as one unit.
pub type BlockSpec = Vec<LayerSpec>;

/// Declarative description of one client's network: K blocks and a
/// classifier head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: FeatureShape,
    pub blocks: Vec<BlockSpec>,
    pub classifier: BlockSpec,
    pub base_width: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    /// End-to-end shape check; the classifier must emit `num_classes` logits.
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("model needs at least one block".into()));
        }
        if self.base_width == 0 {
            return Err(Error::Config("base width must be positive".into()));
        }
        let out = check_spec(&self.flat_layers(), &self.input_shape)?;
        if out != FeatureShape::Flat(self.num_classes) {
            return Err(Error::Config(format!(
                "classifier produces {out}, expected [{}] logits",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// All layers in execution order: blocks, then classifier.
    pub fn flat_layers(&self) -> Vec<LayerSpec> {
        let mut out: Vec<LayerSpec> = self.blocks.iter().flatten().cloned().collect();
        out.extend(self.classifier.iter().cloned());
        out
    }

    /// Index of block `k`'s first layer (0-based block index) in the flat
    /// layer sequence.
    pub fn layer_offset(&self, block: usize) -> usize {
        self.blocks[..block].iter().map(Vec::len).sum()
    }

    pub fn classifier_offset(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// Feature shape after block `k` (1-based; k=0 is the input).
    pub fn block_output_shape(&self, k: usize) -> Result<FeatureShape> {
        let mut shape = self.input_shape.clone();
        for block in self.blocks.iter().take(k) {
            shape = check_spec(block, &shape)?;
        }
        Ok(shape)
    }

    pub fn param_count(&self) -> usize {
        count_params(&self.flat_layers())
    }
}

/// A trained (or initialized) standalone model: spec plus parameters keyed by
/// flat layer index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientModel {
    pub spec: ModelSpec,
    pub params: ParamSet,
}

impl ClientModel {
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        forward_only(&self.spec.flat_layers(), &self.params, x)
    }

    /// Features after block `k` (1-based), before the classifier.
    pub fn features(&self, x: &Tensor, k: usize) -> Result<Tensor> {
        if k > self.spec.num_blocks() {
            return Err(Error::Probe(format!(
                "stage {k} out of range for {} blocks",
                self.spec.num_blocks()
            )));
        }
        let upto = self.spec.layer_offset(k);
        let layers = self.spec.flat_layers();
        forward_only(&layers[..upto], &self.params, x)
    }
}

/// Anything probes can walk stage by stage.
pub trait StagedModel {
    fn num_stages(&self) -> usize;
    fn input_shape(&self) -> &FeatureShape;
    /// Combined features after stage `k` (1-based; k=0 returns the input).
    fn stage_features(&self, x: &Tensor, k: usize) -> Result<Tensor>;
    /// Shape of the stage-`k` features without running data through.
    fn stage_feature_shape(&self, k: usize) -> Result<FeatureShape>;
}

impl StagedModel for ClientModel {
    fn num_stages(&self) -> usize {
        self.spec.num_blocks()
    }

    fn input_shape(&self) -> &FeatureShape {
        &self.spec.input_shape
    }

    fn stage_features(&self, x: &Tensor, k: usize) -> Result<Tensor> {
        self.features(x, k)
    }

    fn stage_feature_shape(&self, k: usize) -> Result<FeatureShape> {
        self.spec.block_output_shape(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_validates_and_counts() {
        let spec = mlp_template(16, 64, 4, 10);
        spec.validate().unwrap();
        // by-hand: (16*64+64) + (64*64+64)*7 + (64*10+10)
        assert_eq!(spec.param_count(), 1088 + 4160 * 7 + 650);
    }

    #[test]
    fn block_offsets_line_up() {
        let spec = mlp_template(16, 64, 3, 10);
        assert_eq!(spec.layer_offset(0), 0);
        assert_eq!(spec.layer_offset(1), 4);
        assert_eq!(spec.classifier_offset(), 12);
        assert_eq!(
            spec.block_output_shape(3).unwrap(),
            FeatureShape::Flat(64)
        );
    }

    #[test]
    fn classifier_dim_mismatch_rejected() {
        let mut spec = mlp_template(16, 32, 2, 10);
        spec.num_classes = 7;
        assert!(spec.validate().is_err());
    }
}
