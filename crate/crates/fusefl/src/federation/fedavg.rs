//! FedAvg: multi-round data-weighted parameter averaging (one round = the
//! one-shot baseline).

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federation::{
    comm_cost, evaluate, param_bytes, split_epochs, storage_cost, train_local, Algorithm,
    CostModel, FedConfig, RunMetrics, TrainOpts, TrainRecord,
};
use crate::model::ClientModel;
use crate::nn::{init_params, LayerParams, ParamSet, Tensor};
use crate::rng::{derive_seed, STREAM_INIT, STREAM_SHUFFLE};

/// Data-weighted average of aligned parameter sets, computed as the first
/// set plus weighted deltas. Averaging identical sets is therefore exactly
/// the identity, bit for bit.
pub fn aggregate(sets: &[ParamSet], weights: &[f64]) -> Result<ParamSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Internal("aggregate of zero parameter sets".into()))?;
    if sets.len() != weights.len() {
        return Err(Error::Internal(format!(
            "{} parameter sets but {} weights",
            sets.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Internal("aggregation weights must sum > 0".into()));
    }
    let mut out = ParamSet::default();
    for (&idx, proto) in first.iter() {
        let mut weights_acc = proto.weights.values().to_vec();
        let mut bias_acc = proto.bias.values().to_vec();
        for (set, &p) in sets.iter().zip(weights) {
            let lp = set.get(idx).ok_or_else(|| {
                Error::Config("cannot average heterogeneous parameter sets".into())
            })?;
            if lp.weights.shape() != proto.weights.shape() {
                return Err(Error::Config(
                    "cannot average heterogeneous parameter sets".into(),
                ));
            }
            let p = p / total;
            for (acc, (v, base)) in weights_acc
                .iter_mut()
                .zip(lp.weights.values().iter().zip(proto.weights.values()))
            {
                *acc += p * (v - base);
            }
            for (acc, (v, base)) in bias_acc
                .iter_mut()
                .zip(lp.bias.values().iter().zip(proto.bias.values()))
            {
                *acc += p * (v - base);
            }
        }
        out.insert(
            idx,
            LayerParams {
                weights: Tensor::new(proto.weights.shape().to_vec(), weights_acc)?,
                bias: Tensor::new(proto.bias.shape().to_vec(), bias_acc)?,
                trainable: proto.trainable,
            },
        );
    }
    Ok(out)
}

/// Run FedAvg for T rounds (or one round for the one-shot variant): broadcast
/// the global parameters, train locally, aggregate weighted by client data
/// sizes.
pub fn run_fedavg(
    cfg: &FedConfig,
    clients: &[Dataset],
    test: &Dataset,
) -> Result<(RunMetrics, ClientModel)> {
    cfg.validate()?;
    if cfg.hetero_specs.is_some() {
        return Err(Error::Config(
            "fedavg averages parameters and requires homogeneous clients".into(),
        ));
    }
    if clients.len() != cfg.clients {
        return Err(Error::Config(format!(
            "{} client datasets for {} clients",
            clients.len(),
            cfg.clients
        )));
    }
    let rounds = match cfg.algorithm {
        Algorithm::OneshotFedAvg => 1,
        _ => cfg.rounds,
    };
    let layers = cfg.template.flat_layers();
    let mut global = init_params(&layers, derive_seed(cfg.seed, STREAM_INIT, 0, 0))?;

    let total: usize = clients.iter().map(Dataset::len).sum();
    let weights: Vec<f64> = clients
        .iter()
        .map(|d| d.len() as f64 / total as f64)
        .collect();
    let round_epochs = split_epochs(cfg.epochs, rounds);

    let mut metrics = RunMetrics {
        freeze_audit_passed: true,
        ..RunMetrics::default()
    };
    for (round0, &epochs) in round_epochs.iter().enumerate() {
        let round = round0 + 1;
        let results: Vec<Result<(ParamSet, Vec<crate::federation::EpochStats>)>> = clients
            .par_iter()
            .enumerate()
            .map(|(m, data)| {
                train_local(
                    data,
                    &layers,
                    global.clone(),
                    &TrainOpts {
                        epochs,
                        learning_rate: cfg.learning_rate,
                        momentum: cfg.momentum,
                        batch_size: cfg.batch_size,
                        shuffle_seed: derive_seed(cfg.seed, STREAM_SHUFFLE, m as u64, round as u64),
                    },
                )
            })
            .collect();
        let mut locals = Vec::with_capacity(clients.len());
        for (m, res) in results.into_iter().enumerate() {
            let (params, stats) = res?;
            for (e, s) in stats.iter().enumerate() {
                metrics.records.push(TrainRecord {
                    phase: cfg.algorithm.name().to_string(),
                    stage_or_round: round,
                    client: m,
                    epoch: e + 1,
                    train_loss: s.train_loss,
                    train_acc: s.train_acc,
                });
            }
            locals.push(params);
        }
        global = aggregate(&locals, &weights)?;
    }

    let model = ClientModel {
        spec: cfg.template.clone(),
        params: global,
    };
    metrics.final_test_accuracy = evaluate(&model, test, cfg.batch_size.max(256))?;
    let s_bytes = param_bytes(cfg.template.param_count());
    let cost = CostModel {
        algorithm: cfg.algorithm,
        model_bytes: s_bytes,
        rounds: rounds as u64,
        clients: cfg.clients as u64,
    };
    let uplink = comm_cost(&cost);
    metrics.comm_bytes = if cfg.count_downlink { 2 * uplink } else { uplink };
    metrics.comm_bytes_closed_form = metrics.comm_bytes;
    metrics.storage_bytes = storage_cost(&cost);
    metrics.storage_bytes_closed_form = metrics.storage_bytes;
    metrics.client_param_counts = vec![cfg.template.param_count(); cfg.clients];
    metrics.global_param_count = cfg.template.param_count();
    Ok((metrics, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mlp_template;
    use crate::nn::Tensor;

    fn toy_clients(n_per: usize, clients: usize, classes: usize) -> (Vec<Dataset>, Dataset) {
        let mk = |n: usize, salt: usize| {
            let mut values = Vec::with_capacity(n * 4);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let c = (i + salt) % classes;
                for d in 0..4 {
                    values.push(c as f64 * 0.5 + (d as f64) * 0.1 - 0.5);
                }
                labels.push(c);
            }
            Dataset::new(Tensor::new(vec![n, 4], values).unwrap(), labels, classes).unwrap()
        };
        let clients: Vec<Dataset> = (0..clients).map(|m| mk(n_per, m)).collect();
        (clients, mk(40, 7))
    }

    #[test]
    fn weighted_average_convexity() {
        // params 0 and 1 with weights (0.25, 0.75) -> 0.75
        let mut a = ParamSet::default();
        a.insert(
            0,
            LayerParams {
                weights: Tensor::new(vec![1, 1], vec![0.0]).unwrap(),
                bias: Tensor::zeros(vec![1]),
                trainable: true,
            },
        );
        let mut b = ParamSet::default();
        b.insert(
            0,
            LayerParams {
                weights: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
                bias: Tensor::zeros(vec![1]),
                trainable: true,
            },
        );
        let avg = aggregate(&[a, b], &[0.25, 0.75]).unwrap();
        assert!((avg.get(0).unwrap().weights.values()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn aggregation_of_identical_params_is_identity() {
        let spec = mlp_template(4, 8, 1, 3);
        let params = init_params(&spec.flat_layers(), 5).unwrap();
        let avg = aggregate(
            &[params.clone(), params.clone(), params.clone()],
            &[0.2, 0.5, 0.3],
        )
        .unwrap();
        for (idx, p) in params.iter() {
            let q = avg.get(*idx).unwrap();
            for (x, y) in p.weights.values().iter().zip(q.weights.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn zero_lr_two_clients_equal_init() {
        let (clients, test) = toy_clients(24, 2, 3);
        let mut cfg = FedConfig::new(Algorithm::OneshotFedAvg, mlp_template(4, 8, 1, 3));
        cfg.clients = 2;
        cfg.epochs = 2;
        cfg.learning_rate = 0.0;
        cfg.seed = 3;
        let (_, model) = run_fedavg(&cfg, &clients, &test).unwrap();
        let init = init_params(
            &cfg.template.flat_layers(),
            derive_seed(cfg.seed, STREAM_INIT, 0, 0),
        )
        .unwrap();
        assert_eq!(model.params, init);
    }

    #[test]
    fn single_client_one_round_is_centralized_training() {
        let (clients, test) = toy_clients(32, 1, 3);
        let template = mlp_template(4, 8, 1, 3);
        let mut cfg = FedConfig::new(Algorithm::OneshotFedAvg, template.clone());
        cfg.clients = 1;
        cfg.epochs = 4;
        cfg.learning_rate = 0.05;
        cfg.seed = 11;
        let (_, model) = run_fedavg(&cfg, &clients, &test).unwrap();
        let init = init_params(
            &template.flat_layers(),
            derive_seed(cfg.seed, STREAM_INIT, 0, 0),
        )
        .unwrap();
        let (expect, _) = train_local(
            &clients[0],
            &template.flat_layers(),
            init,
            &TrainOpts {
                epochs: 4,
                learning_rate: 0.05,
                momentum: cfg.momentum,
                batch_size: cfg.batch_size,
                shuffle_seed: derive_seed(cfg.seed, STREAM_SHUFFLE, 0, 1),
            },
        )
        .unwrap();
        // aggregation with weight 1.0 is exact
        assert_eq!(model.params, expect);
    }

    #[test]
    fn comm_cost_fields_filled() {
        let (clients, test) = toy_clients(24, 2, 3);
        let mut cfg = FedConfig::new(Algorithm::FedAvg, mlp_template(4, 8, 1, 3));
        cfg.clients = 2;
        cfg.epochs = 4;
        cfg.rounds = 2;
        let (metrics, _) = run_fedavg(&cfg, &clients, &test).unwrap();
        let s = param_bytes(cfg.template.param_count());
        assert_eq!(metrics.comm_bytes, 2 * 2 * s);
        assert_eq!(metrics.storage_bytes, s);
    }
}
