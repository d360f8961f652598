//! Representation probes: linear separability and mutual-information
//! estimates per stage.
//!
//! Every probe trains its own auxiliary head on frozen stage features and
//! never mutates the probed model.

pub mod mi;
pub mod separability;

pub use mi::{estimate_mi_x, estimate_mi_y};
pub use separability::linear_separability;

use serde::Serialize;

use crate::data::Dataset;
use crate::error::Result;
use crate::model::StagedModel;
use crate::stats::label_entropy;

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    /// Epochs for each auxiliary head (classifier, decoder, probe).
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 10,
            learning_rate: 0.1,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// One stage's probe readings.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub stage: usize,
    /// Negated reconstruction error; comparable across stages of one model,
    /// not an absolute MI value.
    pub mi_x_proxy: f64,
    /// Estimated I(features; label) in nats, clamped to [0, H(y)].
    pub mi_y: f64,
    /// Test accuracy of a linear classifier on the stage features.
    pub separability: f64,
}

/// Probe every stage of a model. Returns the per-stage results and the
/// empirical label entropy of the training split (in nats).
pub fn probe_all(
    model: &dyn StagedModel,
    train: &Dataset,
    test: &Dataset,
    cfg: &ProbeConfig,
) -> Result<(Vec<ProbeResult>, f64)> {
    let mut results = Vec::with_capacity(model.num_stages());
    for k in 1..=model.num_stages() {
        results.push(ProbeResult {
            stage: k,
            mi_x_proxy: estimate_mi_x(model, k, train, cfg)?,
            mi_y: estimate_mi_y(model, k, train, cfg)?,
            separability: linear_separability(model, k, train, test, cfg)?,
        });
    }
    Ok((results, label_entropy(&train.labels, train.num_classes)))
}
