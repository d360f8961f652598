//! Finite-difference gradient oracle.

use crate::error::{Error, Result};
use crate::nn::layer::LayerSpec;
use crate::nn::loss::cross_entropy;
use crate::nn::net::{backward, forward, forward_only};
use crate::nn::params::ParamSet;
use crate::nn::tensor::Tensor;

fn loss_at(spec: &[LayerSpec], params: &ParamSet, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let logits = forward_only(spec, params, x)?;
    Ok(cross_entropy(&logits, labels)?.0)
}

/// Compare every analytic gradient of every trainable scalar parameter with a
/// central difference (loss(t+e) - loss(t-e)) / 2e, returning the worst
/// relative error with denominator max(|analytic|, |numeric|, 1e-8).
pub fn finite_diff_check(
    spec: &[LayerSpec],
    params: &ParamSet,
    batch: (&Tensor, &[usize]),
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::Config(format!(
            "epsilon must be in (0, 1e-2], got {epsilon}"
        )));
    }
    let (x, labels) = batch;
    let (logits, cache) = forward(spec, params, x)?;
    let (_, dlogits) = cross_entropy(&logits, labels)?;
    let analytic = backward(spec, params, &cache, &dlogits)?;

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let trainable: Vec<usize> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(&i, _)| i)
        .collect();
    for idx in trainable {
        let (dw, db) = analytic
            .get(idx)
            .ok_or_else(|| Error::Internal(format!("no analytic gradient for layer {idx}")))?;
        // weights then biases
        for which in 0..2 {
            let grad_vals = if which == 0 { dw.values() } else { db.values() };
            for j in 0..grad_vals.len() {
                let read = |p: &ParamSet| {
                    let lp = p.get(idx).unwrap();
                    if which == 0 {
                        lp.weights.values()[j]
                    } else {
                        lp.bias.values()[j]
                    }
                };
                let orig = read(&probe);
                {
                    let lp = probe.get_mut(idx).unwrap();
                    let v = if which == 0 {
                        &mut lp.weights.values_mut()[j]
                    } else {
                        &mut lp.bias.values_mut()[j]
                    };
                    *v = orig + epsilon;
                }
                let up = loss_at(spec, &probe, x, labels)?;
                {
                    let lp = probe.get_mut(idx).unwrap();
                    let v = if which == 0 {
                        &mut lp.weights.values_mut()[j]
                    } else {
                        &mut lp.bias.values_mut()[j]
                    };
                    *v = orig - epsilon;
                }
                let down = loss_at(spec, &probe, x, labels)?;
                {
                    let lp = probe.get_mut(idx).unwrap();
                    let v = if which == 0 {
                        &mut lp.weights.values_mut()[j]
                    } else {
                        &mut lp.bias.values_mut()[j]
                    };
                    *v = orig;
                }
                let numeric = (up - down) / (2.0 * epsilon);
                let a = grad_vals[j];
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
    }
    Ok(worst)
}
