//! SGD with momentum.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::params::{GradSet, ParamSet};
use crate::nn::tensor::Tensor;

/// Optimizer state: velocity tensors mirroring every trainable parameter.
#[derive(Debug, Clone)]
pub struct OptState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: BTreeMap<usize, (Tensor, Tensor)>,
}

impl OptState {
    pub fn new(learning_rate: f64, momentum: f64, params: &ParamSet) -> Result<Self> {
        if learning_rate < 0.0 || !learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be a non-negative finite number, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        let mut velocity = BTreeMap::new();
        for (&idx, p) in params.iter() {
            if p.trainable {
                velocity.insert(
                    idx,
                    (
                        Tensor::zeros(p.weights.shape().to_vec()),
                        Tensor::zeros(p.bias.shape().to_vec()),
                    ),
                );
            }
        }
        Ok(OptState {
            learning_rate,
            momentum,
            velocity,
        })
    }
}

/// One SGD step: v <- momentum*v + g; theta <- theta - lr*v.
/// Frozen parameters are untouched; gradient entries must align with
/// trainable parameters.
pub fn sgd_step(params: &mut ParamSet, grads: &GradSet, opt: &mut OptState) -> Result<()> {
    for (&idx, (dw, db)) in grads.entries.iter() {
        let p = params
            .get_mut(idx)
            .ok_or_else(|| Error::Internal(format!("gradient for unknown layer {idx}")))?;
        if !p.trainable {
            return Err(Error::Internal(format!(
                "gradient supplied for frozen layer {idx}"
            )));
        }
        if p.weights.shape() != dw.shape() || p.bias.shape() != db.shape() {
            return Err(Error::Internal(format!(
                "gradient shape mismatch at layer {idx}"
            )));
        }
        let (vw, vb) = opt
            .velocity
            .get_mut(&idx)
            .ok_or_else(|| Error::Internal(format!("no velocity for layer {idx}")))?;
        let m = opt.momentum;
        let lr = opt.learning_rate;
        for ((w, v), g) in p
            .weights
            .values_mut()
            .iter_mut()
            .zip(vw.values_mut())
            .zip(dw.values())
        {
            *v = m * *v + g;
            *w -= lr * *v;
        }
        for ((b, v), g) in p
            .bias
            .values_mut()
            .iter_mut()
            .zip(vb.values_mut())
            .zip(db.values())
        {
            *v = m * *v + g;
            *b -= lr * *v;
        }
    }
    Ok(())
}
