//! Whole-network forward and backward passes over a layer sequence.

use crate::error::{Error, Result};
use crate::nn::layer::{layer_backward, layer_forward, LayerIo, LayerSpec};
use crate::nn::params::{GradSet, ParamSet};
use crate::nn::tensor::Tensor;

/// Per-layer inputs kept from a forward pass; `inputs[i]` is what layer `i`
/// consumed.
pub struct ForwardCache {
    pub inputs: Vec<Tensor>,
}

fn io_for<'a>(
    spec: &LayerSpec,
    params: &'a ParamSet,
    layer_idx: usize,
) -> Result<LayerIo<'a>> {
    if spec.has_params() {
        let p = params.get(layer_idx).ok_or_else(|| {
            Error::Internal(format!("missing parameters for layer {layer_idx}"))
        })?;
        Ok(LayerIo {
            weights: Some(&p.weights),
            bias: Some(&p.bias),
        })
    } else {
        Ok(LayerIo {
            weights: None,
            bias: None,
        })
    }
}

/// Forward pass retaining the activation cache needed by `backward`.
pub fn forward(spec: &[LayerSpec], params: &ParamSet, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
    let mut inputs = Vec::with_capacity(spec.len());
    let mut cur = x.clone();
    for (idx, layer) in spec.iter().enumerate() {
        let io = io_for(layer, params, idx)?;
        let next = layer_forward(idx, layer, &io, &cur)?;
        inputs.push(cur);
        cur = next;
    }
    Ok((cur, ForwardCache { inputs }))
}

/// Forward pass without a cache, for inference.
pub fn forward_only(spec: &[LayerSpec], params: &ParamSet, x: &Tensor) -> Result<Tensor> {
    let mut cur = x.clone();
    for (idx, layer) in spec.iter().enumerate() {
        let io = io_for(layer, params, idx)?;
        cur = layer_forward(idx, layer, &io, &cur)?;
    }
    Ok(cur)
}

/// Backpropagate `d_output` through the network. Gradient entries are emitted
/// only for trainable layers; frozen layers still pass the upstream gradient
/// through to the layers below them.
pub fn backward(
    spec: &[LayerSpec],
    params: &ParamSet,
    cache: &ForwardCache,
    d_output: &Tensor,
) -> Result<GradSet> {
    if cache.inputs.len() != spec.len() {
        return Err(Error::Internal(format!(
            "cache holds {} activations for {} layers",
            cache.inputs.len(),
            spec.len()
        )));
    }
    let mut grads = GradSet::default();
    let mut d_cur = d_output.clone();
    for (idx, layer) in spec.iter().enumerate().rev() {
        let io = io_for(layer, params, idx)?;
        let trainable = params.get(idx).map(|p| p.trainable).unwrap_or(false);
        let x = &cache.inputs[idx];
        if x.batch() != d_cur.batch() {
            return Err(Error::Internal(format!(
                "gradient batch {} does not match cache batch {} at layer {idx}",
                d_cur.batch(),
                x.batch()
            )));
        }
        let out = layer_backward(layer, &io, x, &d_cur, layer.has_params() && trainable)?;
        if let (Some(dw), Some(db)) = (out.d_weights, out.d_bias) {
            grads.entries.insert(idx, (dw, db));
        }
        d_cur = out.d_input;
    }
    Ok(grads)
}
