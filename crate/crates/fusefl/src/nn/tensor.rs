//! Dense row-major f64 tensor, the universal value type of the engine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        if expect != values.len() {
            return Err(Error::Internal(format!(
                "tensor shape {shape:?} wants {expect} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.values.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Leading dimension, conventionally the batch size.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of scalars per sample (product of non-batch dims).
    pub fn sample_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// The values of sample `i` in a batched tensor.
    pub fn sample(&self, i: usize) -> &[f64] {
        let stride = self.sample_len();
        &self.values[i * stride..(i + 1) * stride]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if want != self.values.len() {
            return Err(Error::Internal(format!(
                "cannot reshape {:?} ({} values) to {:?}",
                self.shape,
                self.values.len(),
                shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Select a subset of samples by index, preserving per-sample layout.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let stride = self.sample_len();
        let mut values = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            values.extend_from_slice(self.sample(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, values }
    }

    /// Concatenate batched tensors along axis 1 (the feature/channel axis).
    /// All parts must share the batch size and any trailing spatial dims.
    pub fn concat_features(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Internal("concat of zero tensors".into()))?;
        let batch = first.batch();
        let trailing: &[usize] = &first.shape[2.min(first.shape.len())..];
        for t in parts {
            if t.batch() != batch || &t.shape[2.min(t.shape.len())..] != trailing {
                return Err(Error::Fusion(format!(
                    "cannot concatenate branch outputs {:?} and {:?}",
                    first.shape, t.shape
                )));
            }
            if t.shape.len() != first.shape.len() {
                return Err(Error::Fusion(format!(
                    "cannot concatenate ranks {:?} and {:?}",
                    first.shape, t.shape
                )));
            }
        }
        let axis_total: usize = parts.iter().map(|t| t.shape[1]).sum();
        let tail: usize = trailing.iter().product();
        let mut values = Vec::with_capacity(batch * axis_total * tail);
        for b in 0..batch {
            for t in parts {
                let stride = t.sample_len();
                values.extend_from_slice(&t.values[b * stride..(b + 1) * stride]);
            }
        }
        let mut shape = vec![batch, axis_total];
        shape.extend_from_slice(trailing);
        Ok(Tensor { shape, values })
    }

    /// Element-wise mean of equally shaped tensors.
    pub fn mean_of(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Internal("mean of zero tensors".into()))?;
        for t in parts {
            if t.shape != first.shape {
                return Err(Error::Fusion(format!(
                    "cannot average shapes {:?} and {:?}",
                    first.shape, t.shape
                )));
            }
        }
        let mut values = vec![0.0; first.values.len()];
        for t in parts {
            for (acc, v) in values.iter_mut().zip(&t.values) {
                *acc += v;
            }
        }
        let inv = 1.0 / parts.len() as f64;
        for v in &mut values {
            *v *= inv;
        }
        Ok(Tensor {
            shape: first.shape.clone(),
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_value_agreement_enforced() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn concat_interleaves_per_sample() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![9.0, 8.0]).unwrap();
        let c = Tensor::concat_features(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.values(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
    }

    #[test]
    fn mean_of_two() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::new(vec![1, 2], vec![3.0, 3.0]).unwrap();
        let m = Tensor::mean_of(&[&a, &b]).unwrap();
        assert_eq!(m.values(), &[2.0, 2.0]);
    }

    #[test]
    fn gather_selects_rows() {
        let a = Tensor::new(vec![3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let g = a.gather(&[2, 0]);
        assert_eq!(g.shape(), &[2, 2]);
        assert_eq!(g.values(), &[4.0, 5.0, 0.0, 1.0]);
    }
}
