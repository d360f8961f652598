//! Model evaluation: argmax accuracy with deterministic tie-breaking.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ClientModel, FusedModel};
use crate::nn::Tensor;

/// Index of the largest value; ties go to the lowest class index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Anything that maps a batch of inputs to class logits.
pub trait Predictor {
    fn predict_logits(&self, x: &Tensor) -> Result<Tensor>;
}

impl Predictor for ClientModel {
    fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.logits(x)
    }
}

impl Predictor for FusedModel {
    fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.logits(x)
    }
}

/// Logit-averaging ensemble of standalone models.
pub struct EnsembleModel {
    pub members: Vec<ClientModel>,
}

impl Predictor for EnsembleModel {
    fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        if self.members.is_empty() {
            return Err(Error::Internal("ensemble with no members".into()));
        }
        let outputs: Vec<Tensor> = self
            .members
            .iter()
            .map(|m| m.logits(x))
            .collect::<Result<_>>()?;
        Tensor::mean_of(&outputs.iter().collect::<Vec<_>>())
    }
}

/// Exact fraction of the test set classified correctly, computed in batches.
pub fn evaluate(model: &dyn Predictor, test: &Dataset, batch_size: usize) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty test set".into()));
    }
    let n = test.len();
    let chunk = batch_size.max(1);
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..n).collect();
    for batch in indices.chunks(chunk) {
        let x = test.inputs.gather(batch);
        let logits = model.predict_logits(&x)?;
        if logits.batch() != batch.len() {
            return Err(Error::Internal(format!(
                "predictor returned {} rows for a batch of {}",
                logits.batch(),
                batch.len()
            )));
        }
        for (s, &i) in batch.iter().enumerate() {
            if argmax_row(logits.sample(s)) == test.labels[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / n as f64)
}
