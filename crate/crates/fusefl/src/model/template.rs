//! Default model templates for desk-scale experiments.

use crate::error::{Error, Result};
use crate::model::{BlockSpec, ModelSpec};
use crate::nn::{FeatureShape, LayerSpec};

/// MLP template over flat inputs: K blocks of two Dense+ReLU pairs at the
/// base width, then a single Dense classifier.
pub fn mlp_template(
    input_dim: usize,
    base_width: usize,
    blocks: usize,
    num_classes: usize,
) -> ModelSpec {
    let mut block_specs: Vec<BlockSpec> = Vec::with_capacity(blocks);
    let mut in_dim = input_dim;
    for _ in 0..blocks {
        block_specs.push(vec![
            LayerSpec::Dense {
                in_dim,
                out_dim: base_width,
            },
            LayerSpec::ReLU,
            LayerSpec::Dense {
                in_dim: base_width,
                out_dim: base_width,
            },
            LayerSpec::ReLU,
        ]);
        in_dim = base_width;
    }
    ModelSpec {
        input_shape: FeatureShape::Flat(input_dim),
        blocks: block_specs,
        classifier: vec![LayerSpec::Dense {
            in_dim: base_width,
            out_dim: num_classes,
        }],
        base_width,
        num_classes,
    }
}

/// Small convolutional template over [1, side, side] images: each block is a
/// 3x3 convolution plus ReLU, with 2x2 average pooling while the spatial
/// extent allows, then a Flatten+Dense classifier.
pub fn conv_template(
    side: usize,
    base_channels: usize,
    blocks: usize,
    num_classes: usize,
) -> Result<ModelSpec> {
    if side < 2 {
        return Err(Error::Config(format!("image side {side} too small")));
    }
    let mut block_specs: Vec<BlockSpec> = Vec::with_capacity(blocks);
    let mut channels = 1usize;
    let mut extent = side;
    for _ in 0..blocks {
        let mut block = vec![
            LayerSpec::Conv2d {
                in_channels: channels,
                out_channels: base_channels,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::ReLU,
        ];
        if extent >= 4 {
            block.push(LayerSpec::AvgPool2d { window: 2 });
            extent /= 2;
        }
        block_specs.push(block);
        channels = base_channels;
    }
    let spec = ModelSpec {
        input_shape: FeatureShape::Spatial {
            channels: 1,
            height: side,
            width: side,
        },
        blocks: block_specs,
        classifier: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                in_dim: base_channels * extent * extent,
                out_dim: num_classes,
            },
        ],
        base_width: base_channels,
        num_classes,
    };
    spec.validate()?;
    Ok(spec)
}
