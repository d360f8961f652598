//! Ensemble one-shot FL: isolated local training, logit-mean prediction.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federation::{
    comm_cost, evaluate, param_bytes, storage_cost, train_local, CostModel, EnsembleModel,
    FedConfig, RunMetrics, TrainOpts, TrainRecord,
};
use crate::model::ClientModel;
use crate::nn::init_params;
use crate::rng::{derive_seed, STREAM_INIT, STREAM_SHUFFLE};

/// Train every client in isolation for E epochs and ensemble their logits.
pub fn run_ensemble(
    cfg: &FedConfig,
    clients: &[Dataset],
    test: &Dataset,
) -> Result<(RunMetrics, Vec<ClientModel>)> {
    cfg.validate()?;
    if clients.len() != cfg.clients {
        return Err(Error::Config(format!(
            "{} client datasets for {} clients",
            clients.len(),
            cfg.clients
        )));
    }
    let layers = cfg.template.flat_layers();
    let results: Vec<Result<(crate::nn::ParamSet, Vec<crate::federation::EpochStats>)>> = clients
        .par_iter()
        .enumerate()
        .map(|(m, data)| {
            let init = init_params(&layers, derive_seed(cfg.seed, STREAM_INIT, m as u64, 0))?;
            train_local(
                data,
                &layers,
                init,
                &TrainOpts {
                    epochs: cfg.epochs,
                    learning_rate: cfg.learning_rate,
                    momentum: cfg.momentum,
                    batch_size: cfg.batch_size,
                    shuffle_seed: derive_seed(cfg.seed, STREAM_SHUFFLE, m as u64, 1),
                },
            )
        })
        .collect();

    let mut metrics = RunMetrics {
        freeze_audit_passed: true,
        ..RunMetrics::default()
    };
    let mut models = Vec::with_capacity(clients.len());
    for (m, res) in results.into_iter().enumerate() {
        let (params, stats) = res?;
        for (e, s) in stats.iter().enumerate() {
            metrics.records.push(TrainRecord {
                phase: "ensemble".to_string(),
                stage_or_round: 1,
                client: m,
                epoch: e + 1,
                train_loss: s.train_loss,
                train_acc: s.train_acc,
            });
        }
        models.push(ClientModel {
            spec: cfg.template.clone(),
            params,
        });
    }

    for model in &models {
        metrics
            .per_client_test_accuracy
            .push(evaluate(model, test, cfg.batch_size.max(256))?);
    }
    let ensemble = EnsembleModel {
        members: models.clone(),
    };
    metrics.final_test_accuracy = evaluate(&ensemble, test, cfg.batch_size.max(256))?;

    let s_bytes = param_bytes(cfg.template.param_count());
    let cost = CostModel {
        algorithm: cfg.algorithm,
        model_bytes: s_bytes,
        rounds: 1,
        clients: cfg.clients as u64,
    };
    metrics.comm_bytes = comm_cost(&cost);
    metrics.comm_bytes_closed_form = metrics.comm_bytes;
    metrics.storage_bytes = storage_cost(&cost);
    metrics.storage_bytes_closed_form = metrics.storage_bytes;
    metrics.client_param_counts = vec![cfg.template.param_count(); cfg.clients];
    metrics.global_param_count = cfg.template.param_count() * cfg.clients;
    Ok((metrics, models))
}
