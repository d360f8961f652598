//! Mutual-information estimates.
//!
//! I(features; y) is estimated as H(y) minus the best cross-entropy an
//! auxiliary linear classifier reaches during training. I(features; x) is
//! reported only up to the unknown constant H(x): the probe trains a mirror
//! decoder to reconstruct the input and returns the negated reconstruction
//! error, which is comparable across stages of the same data.

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::StagedModel;
use crate::nn::{
    backward, cross_entropy, forward, forward_only, init_params, mse, sgd_step, LayerSpec,
    OptState, ParamSet, Tensor,
};
use crate::probes::separability::stage_feature_dataset;
use crate::probes::ProbeConfig;
use crate::rng::{derive_seed, rng_from, STREAM_PROBE};
use crate::stats::label_entropy;

enum Target<'a> {
    Labels(&'a [usize]),
    Values(&'a Tensor),
}

/// Shuffled mini-batch training that records the full-dataset loss after
/// every epoch and returns the minimum (the best iterate seen).
fn train_tracking_best(
    spec: &[LayerSpec],
    mut params: ParamSet,
    inputs: &Tensor,
    target: &Target,
    cfg: &ProbeConfig,
    shuffle_seed: u64,
) -> Result<f64> {
    let full_loss = |params: &ParamSet| -> Result<f64> {
        let out = forward_only(spec, params, inputs)?;
        Ok(match target {
            Target::Labels(labels) => cross_entropy(&out, labels)?.0,
            Target::Values(t) => mse(&out, t)?.0,
        })
    };
    let mut best = full_loss(&params)?;
    if spec.is_empty() {
        return Ok(best);
    }
    let mut opt = OptState::new(cfg.learning_rate, 0.9, &params)?;
    let mut rng = rng_from(shuffle_seed);
    let n = inputs.batch();
    let mut indices: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(cfg.batch_size.max(1)) {
            let x = inputs.gather(chunk);
            let (out, cache) = forward(spec, &params, &x)?;
            let d_out = match target {
                Target::Labels(labels) => {
                    let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                    cross_entropy(&out, &y)?.1
                }
                Target::Values(t) => mse(&out, &t.gather(chunk))?.1,
            };
            let grads = backward(spec, &params, &cache, &d_out)?;
            sgd_step(&mut params, &grads, &mut opt)?;
        }
        best = best.min(full_loss(&params)?);
    }
    Ok(best)
}

/// Estimate I(stage-k features; y) in nats: H(y) minus the best auxiliary
/// classifier cross-entropy, clamped to [0, H(y)].
pub fn estimate_mi_y(
    model: &dyn StagedModel,
    k: usize,
    data: &Dataset,
    cfg: &ProbeConfig,
) -> Result<f64> {
    if k > model.num_stages() {
        return Err(Error::Probe(format!(
            "stage {k} out of range 0..={}",
            model.num_stages()
        )));
    }
    let hist = data.label_histogram();
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Probe(
            "mutual-information probe needs at least two classes".into(),
        ));
    }
    let feats = stage_feature_dataset(model, k, data, 1024)?;
    let d = feats.inputs.sample_len();
    let spec = vec![LayerSpec::Dense {
        in_dim: d,
        out_dim: data.num_classes,
    }];
    let params = init_params(&spec, derive_seed(cfg.seed, STREAM_PROBE, k as u64, 2))?;
    let best_ce = train_tracking_best(
        &spec,
        params,
        &feats.inputs,
        &Target::Labels(&feats.labels),
        cfg,
        derive_seed(cfg.seed, STREAM_PROBE, k as u64, 3),
    )?;
    let hy = label_entropy(&data.labels, data.num_classes);
    Ok((hy - best_ce).clamp(0.0, hy))
}

/// Mirror decoder spec from stage-k features back to the flat input: one
/// Dense layer per stage with ReLU in between.
fn mirror_decoder(model: &dyn StagedModel, k: usize) -> Result<Vec<LayerSpec>> {
    let mut dims = Vec::with_capacity(k + 1);
    dims.push(model.input_shape().flat_len());
    for j in 1..=k {
        dims.push(model.stage_feature_shape(j)?.flat_len());
    }
    let mut layers = Vec::new();
    for j in (1..=k).rev() {
        layers.push(LayerSpec::Dense {
            in_dim: dims[j],
            out_dim: dims[j - 1],
        });
        if j > 1 {
            layers.push(LayerSpec::ReLU);
        }
    }
    Ok(layers)
}

/// Proxy for I(stage-k features; x): train the mirror decoder to reconstruct
/// the flattened input and return the negated best mean-squared error. k=0
/// probes the input itself (empty decoder, error 0).
pub fn estimate_mi_x(
    model: &dyn StagedModel,
    k: usize,
    data: &Dataset,
    cfg: &ProbeConfig,
) -> Result<f64> {
    if k > model.num_stages() {
        return Err(Error::Probe(format!(
            "stage {k} out of range 0..={}",
            model.num_stages()
        )));
    }
    let feats = stage_feature_dataset(model, k, data, 1024)?;
    let n = data.len();
    let target = data
        .inputs
        .clone()
        .reshape(vec![n, data.inputs.sample_len()])?;
    let spec = mirror_decoder(model, k)?;
    let params = init_params(&spec, derive_seed(cfg.seed, STREAM_PROBE, k as u64, 4))?;
    let best_mse = train_tracking_best(
        &spec,
        params,
        &feats.inputs,
        &Target::Values(&target),
        cfg,
        derive_seed(cfg.seed, STREAM_PROBE, k as u64, 5),
    )?;
    Ok(-best_mse)
}
