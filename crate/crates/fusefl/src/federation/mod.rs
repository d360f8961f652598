//! Federation algorithms: FedAvg (multi-round and one-shot), ensemble
//! one-shot FL, and progressive train-fuse-freeze, plus classifier
//! calibration, evaluation, and cost accounting.

pub mod calibrate;
pub mod cost;
pub mod ensemble;
pub mod eval;
pub mod fedavg;
pub mod fusefl_run;
pub mod local;
pub mod metrics;

pub use calibrate::{
    aggregate_class_stats, calibrate_classifier, collect_class_stats, CalibrateOpts,
    CalibrationConfig, ClassStats, ClassifierInit, CovarianceKind,
};
pub use cost::{comm_cost, param_bytes, storage_cost, CostModel, BYTES_PER_PARAM};
pub use ensemble::run_ensemble;
pub use eval::{argmax_row, evaluate, EnsembleModel, Predictor};
pub use fedavg::{aggregate, run_fedavg};
pub use fusefl_run::run_fusefl;
pub use local::{train_local, EpochStats, TrainOpts};
pub use metrics::{RunMetrics, TrainRecord};

use serde::{Deserialize, Serialize};

use crate::data::BackdoorConfig;
use crate::error::{Error, Result};
use crate::model::{AdaptorKind, ModelSpec, ScalingPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    FedAvg,
    OneshotFedAvg,
    Ensemble,
    FuseFl,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::OneshotFedAvg => "oneshot_fedavg",
            Algorithm::Ensemble => "ensemble",
            Algorithm::FuseFl => "fusefl",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(Algorithm::FedAvg),
            "oneshot_fedavg" => Ok(Algorithm::OneshotFedAvg),
            "ensemble" => Ok(Algorithm::Ensemble),
            "fusefl" => Ok(Algorithm::FuseFl),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Full configuration of one federated run.
#[derive(Debug, Clone)]
pub struct FedConfig {
    pub algorithm: Algorithm,
    /// Number of clients M.
    pub clients: usize,
    /// Number of split blocks K (progressive fusion only).
    pub blocks: usize,
    /// Total local training epochs E per client.
    pub epochs: usize,
    /// Communication rounds T (FedAvg only).
    pub rounds: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub adaptor: AdaptorKind,
    pub scaling: ScalingPolicy,
    pub seed: u64,
    /// Count the downlink broadcast too (default: uplink only).
    pub count_downlink: bool,
    pub template: ModelSpec,
    /// Per-client specs for heterogeneous runs (progressive fusion only).
    pub hetero_specs: Option<Vec<ModelSpec>>,
    pub backdoor: Option<BackdoorConfig>,
    pub calibration: CalibrationConfig,
}

impl FedConfig {
    pub fn new(algorithm: Algorithm, template: ModelSpec) -> Self {
        FedConfig {
            algorithm,
            clients: template.num_classes.clamp(1, 5),
            blocks: template.num_blocks(),
            epochs: 40,
            rounds: 1,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 128,
            adaptor: AdaptorKind::LinearMix,
            scaling: ScalingPolicy::SqrtM,
            seed: 0,
            count_downlink: false,
            template,
            hetero_specs: None,
            backdoor: None,
            calibration: CalibrationConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::Config("need at least one client".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(
                "learning rate must be >= 0 and momentum in [0, 1)".into(),
            ));
        }
        if let ScalingPolicy::Explicit(w) = self.scaling {
            if w == 0 {
                return Err(Error::Config("explicit width must be >= 1".into()));
            }
        }
        self.template.validate()?;
        if self.algorithm == Algorithm::FuseFl {
            if self.blocks == 0 || self.blocks != self.template.num_blocks() {
                return Err(Error::Config(format!(
                    "config wants {} blocks but the template has {}",
                    self.blocks,
                    self.template.num_blocks()
                )));
            }
            if let Some(specs) = &self.hetero_specs {
                if specs.len() != self.clients {
                    return Err(Error::Config(format!(
                        "{} hetero specs for {} clients",
                        specs.len(),
                        self.clients
                    )));
                }
                for s in specs {
                    s.validate()?;
                    if s.num_blocks() != self.blocks {
                        return Err(Error::Config(
                            "heterogeneous specs must share the block count".into(),
                        ));
                    }
                    if s.input_shape != self.template.input_shape
                        || s.num_classes != self.template.num_classes
                    {
                        return Err(Error::Config(
                            "heterogeneous specs must share input shape and classes".into(),
                        ));
                    }
                }
            }
        } else if self.hetero_specs.is_some() {
            return Err(Error::Config(format!(
                "{} requires homogeneous clients",
                self.algorithm.name()
            )));
        }
        Ok(())
    }
}

/// Split E epochs over `parts` rounds/stages: floor each, remainder added to
/// the last.
pub fn split_epochs(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let mut out = vec![base; parts];
    if let Some(last) = out.last_mut() {
        *last += total - base * parts;
    }
    out
}
