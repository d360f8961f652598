//! Parameter storage, deterministic initialization, and freezing.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::LayerSpec;
use crate::nn::tensor::Tensor;
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
    pub trainable: bool,
}

/// Parameters of a layer sequence, keyed by layer index. Only layers that
/// carry parameters (Dense, Conv2d) have entries.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    entries: BTreeMap<usize, LayerParams>,
}

impl ParamSet {
    pub fn get(&self, layer: usize) -> Option<&LayerParams> {
        self.entries.get(&layer)
    }

    pub fn get_mut(&mut self, layer: usize) -> Option<&mut LayerParams> {
        self.entries.get_mut(&layer)
    }

    pub fn insert(&mut self, layer: usize, params: LayerParams) {
        self.entries.insert(layer, params);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&usize, &LayerParams)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&usize, &mut LayerParams)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries
            .values()
            .map(|p| p.weights.scalar_count() + p.bias.scalar_count())
            .sum()
    }

    pub fn freeze_all(&mut self) {
        for p in self.entries.values_mut() {
            p.trainable = false;
        }
    }

    /// Split entries at `cut`: entries with index < cut keep their indices,
    /// the rest are re-keyed to start at zero.
    pub fn split_at(self, cut: usize) -> (ParamSet, ParamSet) {
        let mut head = ParamSet::default();
        let mut tail = ParamSet::default();
        for (idx, p) in self.entries {
            if idx < cut {
                head.insert(idx, p);
            } else {
                tail.insert(idx - cut, p);
            }
        }
        (head, tail)
    }

    /// Re-key all entries upward by `offset`.
    pub fn shifted(self, offset: usize) -> ParamSet {
        let mut out = ParamSet::default();
        for (idx, p) in self.entries {
            out.insert(idx + offset, p);
        }
        out
    }

    /// Merge another set into this one (indices must not collide).
    pub fn merge(&mut self, other: ParamSet) {
        for (idx, p) in other.entries {
            debug_assert!(!self.entries.contains_key(&idx));
            self.entries.insert(idx, p);
        }
    }
}

/// Gradients for the trainable layers of a sequence.
#[derive(Debug, Clone, Default)]
pub struct GradSet {
    pub entries: BTreeMap<usize, (Tensor, Tensor)>,
}

impl GradSet {
    pub fn get(&self, layer: usize) -> Option<&(Tensor, Tensor)> {
        self.entries.get(&layer)
    }
}

/// Scaled-uniform fan-in initialization: weights from
/// U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases zero. Deterministic given the
/// seed; layers are initialized in index order from a single stream.
pub fn init_params(spec: &[LayerSpec], seed: u64) -> Result<ParamSet> {
    validate_chain(spec)?;
    let mut rng = rng_from(seed);
    let mut set = ParamSet::default();
    for (idx, layer) in spec.iter().enumerate() {
        if !layer.has_params() {
            continue;
        }
        let bound = (6.0 / layer.fan_in() as f64).sqrt();
        let w_shape = layer.weight_shape().expect("has params");
        let n: usize = w_shape.iter().product();
        let mut w = Vec::with_capacity(n);
        for _ in 0..n {
            w.push(rng.random_range(-bound..bound));
        }
        set.insert(
            idx,
            LayerParams {
                weights: Tensor::new(w_shape, w)?,
                bias: Tensor::zeros(layer.bias_shape().expect("has params")),
                trainable: true,
            },
        );
    }
    Ok(set)
}

/// Check the statically checkable parts of a layer chain: positive dims and
/// consistent feature widths between consecutive parameterized layers. The
/// full end-to-end check needs the input shape (see `check_spec`).
pub fn validate_chain(spec: &[LayerSpec]) -> Result<()> {
    let mut last_out: Option<usize> = None;
    for (idx, layer) in spec.iter().enumerate() {
        match *layer {
            LayerSpec::Dense { in_dim, out_dim } => {
                if in_dim == 0 || out_dim == 0 {
                    return Err(Error::Config(format!(
                        "layer {idx}: Dense dims must be positive"
                    )));
                }
                if let Some(prev) = last_out {
                    if prev != in_dim {
                        return Err(Error::Config(format!(
                            "layer {idx}: Dense expects {in_dim} inputs but previous layer produces {prev}"
                        )));
                    }
                }
                last_out = Some(out_dim);
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if in_channels == 0 || out_channels == 0 || stride == 0 {
                    return Err(Error::Config(format!(
                        "layer {idx}: Conv2d dims must be positive"
                    )));
                }
                if kernel != 1 && kernel != 3 {
                    return Err(Error::Config(format!(
                        "layer {idx}: Conv2d kernel must be 1 or 3, got {kernel}"
                    )));
                }
                if let Some(prev) = last_out {
                    if prev != in_channels {
                        return Err(Error::Config(format!(
                            "layer {idx}: Conv2d expects {in_channels} channels but previous layer produces {prev}"
                        )));
                    }
                }
                last_out = Some(out_channels);
            }
            LayerSpec::AvgPool2d { window } => {
                if window == 0 {
                    return Err(Error::Config(format!(
                        "layer {idx}: AvgPool2d window must be positive"
                    )));
                }
            }
            // Flatten turns channels into a flat width only the input shape
            // can determine; defer to the full check.
            LayerSpec::Flatten => last_out = None,
            LayerSpec::ReLU => {}
        }
    }
    Ok(())
}
