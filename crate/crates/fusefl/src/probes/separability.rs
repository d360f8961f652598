//! Linear separability: accuracy of a linear classifier on frozen stage
//! features.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federation::{argmax_row, train_local, TrainOpts};
use crate::model::StagedModel;
use crate::nn::{forward_only, init_params, LayerSpec, Tensor};
use crate::probes::ProbeConfig;
use crate::rng::{derive_seed, STREAM_PROBE};

/// Extract flattened stage-`k` features for a whole dataset (k=0 passes the
/// flattened input through).
pub(crate) fn stage_feature_dataset(
    model: &dyn StagedModel,
    k: usize,
    data: &Dataset,
    chunk: usize,
) -> Result<Dataset> {
    let n = data.len();
    let indices: Vec<usize> = (0..n).collect();
    let mut values: Vec<f64> = Vec::new();
    for batch in indices.chunks(chunk.max(1)) {
        let x = data.inputs.gather(batch);
        let f = model.stage_features(&x, k)?;
        values.extend_from_slice(f.values());
    }
    let d = values.len() / n;
    Dataset::new(
        Tensor::new(vec![n, d], values)?,
        data.labels.clone(),
        data.num_classes,
    )
}

/// Freeze everything through stage `k`, fit one Dense layer on the stage
/// features for the configured epochs, and report test accuracy. The probed
/// model is left untouched.
pub fn linear_separability(
    model: &dyn StagedModel,
    k: usize,
    train: &Dataset,
    test: &Dataset,
    cfg: &ProbeConfig,
) -> Result<f64> {
    if k == 0 || k > model.num_stages() {
        return Err(Error::Probe(format!(
            "stage {k} out of range 1..={}",
            model.num_stages()
        )));
    }
    let train_feats = stage_feature_dataset(model, k, train, 1024)?;
    let test_feats = stage_feature_dataset(model, k, test, 1024)?;
    let d = train_feats.inputs.sample_len();
    let spec = vec![LayerSpec::Dense {
        in_dim: d,
        out_dim: train.num_classes,
    }];
    let init = init_params(&spec, derive_seed(cfg.seed, STREAM_PROBE, k as u64, 0))?;
    let (probe, _) = train_local(
        &train_feats,
        &spec,
        init,
        &TrainOpts {
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            momentum: 0.9,
            batch_size: cfg.batch_size,
            shuffle_seed: derive_seed(cfg.seed, STREAM_PROBE, k as u64, 1),
        },
    )?;
    let logits = forward_only(&spec, &probe, &test_feats.inputs)?;
    let correct = test_feats
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax_row(logits.sample(i)) == y)
        .count();
    Ok(correct as f64 / test_feats.len() as f64)
}
