//! Mini-batch local training.

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federation::eval::argmax_row;
use crate::nn::{backward, cross_entropy, forward, sgd_step, LayerSpec, OptState, ParamSet};
use crate::rng::rng_from;

#[derive(Debug, Clone)]
pub struct TrainOpts {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Derived stream seed driving batch shuffling for this client/stage.
    pub shuffle_seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_acc: f64,
}

/// Train `spec` on one client's data with shuffled mini-batch SGD. Returns
/// the updated parameters and per-epoch running loss/accuracy. Frozen
/// parameters are untouched; everything is deterministic given the options.
pub fn train_local(
    data: &Dataset,
    spec: &[LayerSpec],
    params: ParamSet,
    opts: &TrainOpts,
) -> Result<(ParamSet, Vec<EpochStats>)> {
    if data.is_empty() {
        return Err(Error::Partition("cannot train on an empty dataset".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut params = params;
    let mut opt = OptState::new(opts.learning_rate, opts.momentum, &params)?;
    let mut rng = rng_from(opts.shuffle_seed);
    let n = data.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut stats = Vec::with_capacity(opts.epochs);
    for _ in 0..opts.epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in indices.chunks(opts.batch_size) {
            let x = data.inputs.gather(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (logits, cache) = forward(spec, &params, &x)?;
            let (loss, dlogits) = cross_entropy(&logits, &y)?;
            loss_sum += loss * chunk.len() as f64;
            for (s, &label) in y.iter().enumerate() {
                if argmax_row(logits.sample(s)) == label {
                    correct += 1;
                }
            }
            let grads = backward(spec, &params, &cache, &dlogits)?;
            sgd_step(&mut params, &grads, &mut opt)?;
        }
        stats.push(EpochStats {
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
        });
    }
    Ok((params, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Tensor};

    fn separable_two_class(n: usize) -> Dataset {
        // class 0 around (-1, -1), class 1 around (+1, +1), margin 1
        let mut values = Vec::with_capacity(n * 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            let offset = if c == 0 { -1.0 } else { 1.0 };
            let jitter = (i as f64 / n as f64) * 0.4 - 0.2;
            values.push(offset + jitter);
            values.push(offset - jitter);
            labels.push(c);
        }
        Dataset::new(Tensor::new(vec![n, 2], values).unwrap(), labels, 2).unwrap()
    }

    fn opts(epochs: usize, lr: f64) -> TrainOpts {
        TrainOpts {
            epochs,
            learning_rate: lr,
            momentum: 0.9,
            batch_size: 16,
            shuffle_seed: 42,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let data = separable_two_class(32);
        let spec = vec![LayerSpec::Dense {
            in_dim: 2,
            out_dim: 2,
        }];
        let init = init_params(&spec, 1).unwrap();
        let (out, stats) = train_local(&data, &spec, init.clone(), &opts(3, 0.0)).unwrap();
        assert_eq!(out, init);
        assert_eq!(stats.len(), 3);
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        // logistic-regression oracle: the two clusters sit on opposite sides
        // of x+y=0 with margin 1.2, so a linear model separates them
        let data = separable_two_class(64);
        let spec = vec![LayerSpec::Dense {
            in_dim: 2,
            out_dim: 2,
        }];
        let init = init_params(&spec, 1).unwrap();
        let (_, stats) = train_local(&data, &spec, init, &opts(50, 0.1)).unwrap();
        assert_eq!(stats.last().unwrap().train_acc, 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable_two_class(64);
        let spec = vec![
            LayerSpec::Dense {
                in_dim: 2,
                out_dim: 8,
            },
            LayerSpec::ReLU,
            LayerSpec::Dense {
                in_dim: 8,
                out_dim: 2,
            },
        ];
        let init = init_params(&spec, 9).unwrap();
        let (a, _) = train_local(&data, &spec, init.clone(), &opts(5, 0.05)).unwrap();
        let (b, _) = train_local(&data, &spec, init, &opts(5, 0.05)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_is_partition_error() {
        let data = Dataset::new(Tensor::zeros(vec![1, 2]), vec![0], 2)
            .unwrap()
            .subset(&[]);
        let spec = vec![LayerSpec::Dense {
            in_dim: 2,
            out_dim: 2,
        }];
        let init = init_params(&spec, 1).unwrap();
        assert!(matches!(
            train_local(&data, &spec, init, &opts(1, 0.1)),
            Err(Error::Partition(_))
        ));
    }
}
