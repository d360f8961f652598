//! Labeled dataset container.

use crate::error::{Error, Result};
use crate::nn::{FeatureShape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.batch() != labels.len() {
            return Err(Error::Input(format!(
                "{} inputs but {} labels",
                inputs.batch(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_shape(&self) -> Result<FeatureShape> {
        FeatureShape::of_batch(&self.inputs)
    }

    /// Materialize the subset selected by `indices` (copying rows).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Concatenate datasets sample-wise (shared per-sample shape and class
    /// count required).
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("cannot concatenate zero datasets".into()))?;
        let tail = &first.inputs.shape()[1..];
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if &p.inputs.shape()[1..] != tail || p.num_classes != first.num_classes {
                return Err(Error::Input(
                    "datasets disagree on sample shape or classes".into(),
                ));
            }
            values.extend_from_slice(p.inputs.values());
            labels.extend_from_slice(&p.labels);
        }
        let mut shape = vec![labels.len()];
        shape.extend_from_slice(tail);
        Dataset::new(Tensor::new(shape, values)?, labels, first.num_classes)
    }

    /// Per-class sample counts.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}
