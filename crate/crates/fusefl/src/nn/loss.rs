//! Cross-entropy and mean-squared-error losses with their output gradients.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Mean cross-entropy over a batch of logits [B, C] against class labels.
/// Returns the loss and d(loss)/d(logits) = (softmax - onehot) / B.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = match logits.shape() {
        [b, c] => (*b, *c),
        other => {
            return Err(Error::Input(format!(
                "cross_entropy expects [B, C] logits, got {other:?}"
            )))
        }
    };
    if b == 0 {
        return Err(Error::Input("cross_entropy on empty batch".into()));
    }
    if labels.len() != b {
        return Err(Error::Input(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let vals = logits.values();
    let mut dlogits = vec![0.0; b * c];
    let mut loss = 0.0;
    let inv_b = 1.0 / b as f64;
    for s in 0..b {
        let row = &vals[s * c..(s + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln() + max;
        loss += (log_denom - row[labels[s]]) * inv_b;
        let drow = &mut dlogits[s * c..(s + 1) * c];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - log_denom).exp();
            drow[j] = (p - if j == labels[s] { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    Ok((loss, Tensor::new(vec![b, c], dlogits)?))
}

/// Mean squared error over all scalar entries, with gradient w.r.t. `pred`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::Input(format!(
            "mse shape mismatch: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.scalar_count() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.scalar_count()];
    for (i, (&p, &t)) in pred.values().iter().zip(target.values()).enumerate() {
        let d = p - t;
        loss += d * d;
        grad[i] = 2.0 * d / n;
    }
    Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
}
