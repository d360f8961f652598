//! Adaptors: the map from M concatenated branch outputs into the next local
//! block's input. Either a parameter-free average or a learned mixing layer
//! (Dense for flat features, a 1x1 convolution for spatial ones).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::{layer_forward, LayerIo};
use crate::nn::{count_params, init_params, FeatureShape, LayerParams, LayerSpec, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdaptorKind {
    Average,
    LinearMix,
}

impl std::fmt::Display for AdaptorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AdaptorKind::Average => write!(f, "average"),
            AdaptorKind::LinearMix => write!(f, "linear_mix"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Adaptor {
    /// Element-wise mean over equally shaped branch outputs.
    Average,
    /// Learned map from the concatenated branch outputs.
    LinearMix {
        layer: LayerSpec,
        params: LayerParams,
    },
}

impl Adaptor {
    pub fn kind(&self) -> AdaptorKind {
        match self {
            Adaptor::Average => AdaptorKind::Average,
            Adaptor::LinearMix { .. } => AdaptorKind::LinearMix,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Adaptor::Average => 0,
            Adaptor::LinearMix { layer, .. } => layer.param_count(),
        }
    }

    /// Apply the adaptor to branch outputs listed in concatenation order.
    pub fn forward(&self, branches: &[&Tensor]) -> Result<Tensor> {
        match self {
            Adaptor::Average => Tensor::mean_of(branches),
            Adaptor::LinearMix { layer, params } => {
                let concat = Tensor::concat_features(branches)?;
                layer_forward(
                    0,
                    layer,
                    &LayerIo {
                        weights: Some(&params.weights),
                        bias: Some(&params.bias),
                    },
                    &concat,
                )
            }
        }
    }

    /// The mixing layer an in-training suffix starts with, if any.
    pub fn mix_layer(&self) -> Option<(&LayerSpec, &LayerParams)> {
        match self {
            Adaptor::Average => None,
            Adaptor::LinearMix { layer, params } => Some((layer, params)),
        }
    }
}

/// The mixing LayerSpec for given branch shapes and output feature size, or
/// an error when the shapes cannot be mixed.
pub fn mix_layer_spec(branch_shapes: &[FeatureShape], out_features: usize) -> Result<LayerSpec> {
    let first = branch_shapes
        .first()
        .ok_or_else(|| Error::Fusion("adaptor needs at least one branch".into()))?;
    match first {
        FeatureShape::Flat(_) => {
            let mut total = 0usize;
            for s in branch_shapes {
                match s {
                    FeatureShape::Flat(d) => total += d,
                    other => {
                        return Err(Error::Fusion(format!(
                            "cannot mix flat and spatial branches ({other})"
                        )))
                    }
                }
            }
            Ok(LayerSpec::Dense {
                in_dim: total,
                out_dim: out_features,
            })
        }
        FeatureShape::Spatial { height, width, .. } => {
            let mut total = 0usize;
            for s in branch_shapes {
                match s {
                    FeatureShape::Spatial {
                        channels,
                        height: h,
                        width: w,
                    } if h == height && w == width => total += channels,
                    other => {
                        return Err(Error::Fusion(format!(
                            "spatial branches must agree on extent, got {other}"
                        )))
                    }
                }
            }
            Ok(LayerSpec::Conv2d {
                in_channels: total,
                out_channels: out_features,
                kernel: 1,
                stride: 1,
                padding: 0,
            })
        }
    }
}

/// Build an adaptor over the given branch output shapes.
///
/// Average is parameter-free and requires every branch shape (and the
/// requested output feature size) to coincide; LinearMix initializes a fresh
/// mixing layer like any other layer.
pub fn make_adaptor(
    kind: AdaptorKind,
    branch_shapes: &[FeatureShape],
    out_features: usize,
    seed: u64,
) -> Result<Adaptor> {
    match kind {
        AdaptorKind::Average => {
            let first = branch_shapes
                .first()
                .ok_or_else(|| Error::Fusion("adaptor needs at least one branch".into()))?;
            if branch_shapes.iter().any(|s| s != first) {
                return Err(Error::Config(
                    "Average adaptor requires identical branch shapes; use LinearMix for heterogeneous branches"
                        .into(),
                ));
            }
            if first.feature_axis() != out_features {
                return Err(Error::Config(format!(
                    "Average adaptor cannot change the feature size ({} -> {out_features}); use LinearMix",
                    first.feature_axis()
                )));
            }
            Ok(Adaptor::Average)
        }
        AdaptorKind::LinearMix => {
            let layer = mix_layer_spec(branch_shapes, out_features)?;
            let spec = vec![layer.clone()];
            let mut params = init_params(&spec, seed)?;
            let entry = params.get_mut(0).expect("mix layer has params");
            // When every branch matches the output size, start at the
            // averaging map plus a small perturbation. Mixing then begins in
            // the same activation regime as a single branch, which keeps
            // feature magnitudes from compounding stage over stage.
            let first = &branch_shapes[0];
            if branch_shapes.iter().all(|s| s == first)
                && first.feature_axis() == out_features
            {
                let m = branch_shapes.len() as f64;
                let uniform = std::mem::replace(
                    &mut entry.weights,
                    Tensor::zeros(layer.weight_shape().expect("mix has weights")),
                );
                let noise_scale = 0.1;
                match &layer {
                    LayerSpec::Dense { out_dim, .. } => {
                        let out_dim = *out_dim;
                        let w = entry.weights.values_mut();
                        for (i, (wv, nv)) in w.iter_mut().zip(uniform.values()).enumerate() {
                            let row = i / out_dim; // input index in the concat
                            let col = i % out_dim;
                            let base = if row % out_dim == col { 1.0 / m } else { 0.0 };
                            *wv = base + noise_scale * nv;
                        }
                    }
                    LayerSpec::Conv2d {
                        out_channels,
                        in_channels,
                        ..
                    } => {
                        // kernel is 1x1 here: weights are [out_c, in_c, 1, 1]
                        let (out_c, in_c) = (*out_channels, *in_channels);
                        let w = entry.weights.values_mut();
                        for (i, (wv, nv)) in w.iter_mut().zip(uniform.values()).enumerate() {
                            let oc = i / in_c;
                            let ic = i % in_c;
                            let base = if ic % out_c == oc { 1.0 / m } else { 0.0 };
                            *wv = base + noise_scale * nv;
                        }
                    }
                    _ => unreachable!("mix layers are Dense or Conv2d"),
                }
            }
            let entry = entry.clone();
            Ok(Adaptor::LinearMix {
                layer,
                params: entry,
            })
        }
    }
}

/// Total parameters a LinearMix for these shapes would add (0 for Average).
pub fn adaptor_param_count(
    kind: AdaptorKind,
    branch_shapes: &[FeatureShape],
    out_features: usize,
) -> Result<usize> {
    match kind {
        AdaptorKind::Average => Ok(0),
        AdaptorKind::LinearMix => Ok(count_params(&[mix_layer_spec(
            branch_shapes,
            out_features,
        )?])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(d: usize) -> FeatureShape {
        FeatureShape::Flat(d)
    }

    #[test]
    fn average_of_identical_tensors_is_identity() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let adaptor = make_adaptor(AdaptorKind::Average, &[flat(3), flat(3)], 3, 0).unwrap();
        let out = adaptor.forward(&[&a, &a]).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn average_of_two_branches() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::new(vec![1, 2], vec![3.0, 3.0]).unwrap();
        let adaptor = make_adaptor(AdaptorKind::Average, &[flat(2), flat(2)], 2, 0).unwrap();
        assert_eq!(adaptor.forward(&[&a, &b]).unwrap().values(), &[2.0, 2.0]);
    }

    #[test]
    fn average_rejects_mismatched_dims_pointing_at_linear_mix() {
        let err = make_adaptor(AdaptorKind::Average, &[flat(2), flat(3)], 2, 0).unwrap_err();
        assert!(err.to_string().contains("LinearMix"), "{err}");
    }

    #[test]
    fn selector_weights_pick_one_branch() {
        // block-diagonal selector: mix weights copy branch 1's slice
        let dims = [flat(2), flat(2)];
        let layer = mix_layer_spec(&dims, 2).unwrap();
        assert_eq!(
            layer,
            LayerSpec::Dense {
                in_dim: 4,
                out_dim: 2
            }
        );
        let mut weights = vec![0.0; 4 * 2];
        // concat layout: [b0_0, b0_1, b1_0, b1_1]; select branch 1
        weights[2 * 2] = 1.0; // in 2 -> out 0
        weights[3 * 2 + 1] = 1.0; // in 3 -> out 1
        let adaptor = Adaptor::LinearMix {
            layer,
            params: LayerParams {
                weights: Tensor::new(vec![4, 2], weights).unwrap(),
                bias: Tensor::zeros(vec![2]),
                trainable: false,
            },
        };
        let b0 = Tensor::new(vec![2, 2], vec![9.0, 9.0, 9.0, 9.0]).unwrap();
        let b1 = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = adaptor.forward(&[&b0, &b1]).unwrap();
        assert_eq!(out.values(), b1.values());
    }

    #[test]
    fn spatial_mix_is_a_one_by_one_conv() {
        let shapes = [
            FeatureShape::Spatial {
                channels: 3,
                height: 4,
                width: 4,
            },
            FeatureShape::Spatial {
                channels: 5,
                height: 4,
                width: 4,
            },
        ];
        let layer = mix_layer_spec(&shapes, 6).unwrap();
        assert_eq!(
            layer,
            LayerSpec::Conv2d {
                in_channels: 8,
                out_channels: 6,
                kernel: 1,
                stride: 1,
                padding: 0
            }
        );
    }
}
