//! Classifier calibration from shared per-class feature statistics.
//!
//! Clients report per-class feature means and variances of the frozen fused
//! features on their own data; the server aggregates them into per-class
//! diagonal Gaussians, samples virtual features, and (re)trains the final
//! classifier on them.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federation::{aggregate, train_local, TrainOpts};
use crate::model::BlockSpec;
use crate::nn::{ParamSet, Tensor};
use crate::rng::{derive_seed, rng_from, STREAM_CALIBRATE, STREAM_VIRTUAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceKind {
    Diagonal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Virtual features sampled per class (0 keeps the initialization).
    pub virtual_per_class: usize,
    /// Training epochs on the virtual features.
    pub epochs: usize,
    pub covariance: CovarianceKind,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            virtual_per_class: 100,
            epochs: 10,
            covariance: CovarianceKind::Diagonal,
        }
    }
}

/// Per-class feature statistics of one client: counts, mean vector and
/// per-dimension variance.
#[derive(Debug, Clone)]
pub struct ClassStats {
    pub counts: Vec<usize>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
}

impl ClassStats {
    pub fn feature_dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }
}

/// Collect per-class mean/variance over flat features [N, d].
pub fn collect_class_stats(
    features: &Tensor,
    labels: &[usize],
    num_classes: usize,
) -> Result<ClassStats> {
    let n = features.batch();
    if n != labels.len() {
        return Err(Error::Internal(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    let d = features.sample_len();
    let mut counts = vec![0usize; num_classes];
    let mut sums = vec![vec![0.0; d]; num_classes];
    let mut sq_sums = vec![vec![0.0; d]; num_classes];
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        let row = features.sample(i);
        for (j, &v) in row.iter().enumerate() {
            sums[y][j] += v;
            sq_sums[y][j] += v * v;
        }
    }
    let mut means = vec![vec![0.0; d]; num_classes];
    let mut vars = vec![vec![0.0; d]; num_classes];
    for c in 0..num_classes {
        if counts[c] == 0 {
            continue;
        }
        let inv = 1.0 / counts[c] as f64;
        for j in 0..d {
            means[c][j] = sums[c][j] * inv;
            vars[c][j] = (sq_sums[c][j] * inv - means[c][j] * means[c][j]).max(0.0);
        }
    }
    Ok(ClassStats {
        counts,
        means,
        vars,
    })
}

/// Count-weighted aggregation of client statistics into global per-class
/// Gaussians (population mean and variance via pooled second moments).
pub fn aggregate_class_stats(stats: &[ClassStats]) -> Result<ClassStats> {
    let first = stats
        .first()
        .ok_or_else(|| Error::Internal("no statistics to aggregate".into()))?;
    let num_classes = first.counts.len();
    let d = first.feature_dim();
    let mut counts = vec![0usize; num_classes];
    let mut means = vec![vec![0.0; d]; num_classes];
    let mut second = vec![vec![0.0; d]; num_classes];
    for s in stats {
        if s.counts.len() != num_classes || s.feature_dim() != d {
            return Err(Error::Internal(
                "client statistics shapes disagree".into(),
            ));
        }
        for c in 0..num_classes {
            counts[c] += s.counts[c];
            let w = s.counts[c] as f64;
            for j in 0..d {
                means[c][j] += w * s.means[c][j];
                second[c][j] += w * (s.vars[c][j] + s.means[c][j] * s.means[c][j]);
            }
        }
    }
    let mut vars = vec![vec![0.0; d]; num_classes];
    for c in 0..num_classes {
        if counts[c] == 0 {
            continue;
        }
        let inv = 1.0 / counts[c] as f64;
        for j in 0..d {
            means[c][j] *= inv;
            second[c][j] *= inv;
            vars[c][j] = (second[c][j] - means[c][j] * means[c][j]).max(0.0);
        }
    }
    Ok(ClassStats {
        counts,
        means,
        vars,
    })
}

/// How the calibrated classifier starts out.
pub enum ClassifierInit {
    /// Data-weighted average of shape-compatible client classifiers.
    WeightedAverage(Vec<(ParamSet, f64)>),
    /// Freshly initialized parameters.
    Fresh(ParamSet),
}

/// Training hyperparameters reused for the calibration fit.
pub struct CalibrateOpts {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Build the final classifier: resolve the initialization, sample
/// `virtual_per_class` features per class from the aggregated Gaussians and
/// train for the configured epochs. Classes nobody holds are skipped with a
/// warning; the classifier still covers every output.
pub fn calibrate_classifier(
    classifier: &BlockSpec,
    init: ClassifierInit,
    stats: &[ClassStats],
    ccfg: &CalibrationConfig,
    opts: &CalibrateOpts,
) -> Result<(ParamSet, Vec<String>)> {
    let CovarianceKind::Diagonal = ccfg.covariance;
    let mut warnings = Vec::new();
    let params = match init {
        ClassifierInit::Fresh(p) => p,
        ClassifierInit::WeightedAverage(members) => {
            let total: f64 = members.iter().map(|(_, w)| w).sum();
            if total <= 0.0 {
                return Err(Error::Internal("zero total weight for averaging".into()));
            }
            let sets: Vec<ParamSet> = members.iter().map(|(p, _)| p.clone()).collect();
            let weights: Vec<f64> = members.iter().map(|(_, w)| w / total).collect();
            aggregate(&sets, &weights)?
        }
    };
    if ccfg.virtual_per_class == 0 {
        return Ok((params, warnings));
    }

    let global = aggregate_class_stats(stats)?;
    let num_classes = global.counts.len();
    let d = global.feature_dim();
    let mut rng = rng_from(derive_seed(opts.seed, STREAM_VIRTUAL, 0, 0));
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for c in 0..num_classes {
        if global.counts[c] == 0 {
            warnings.push(format!("class {c} has no samples; skipped in calibration"));
            continue;
        }
        for _ in 0..ccfg.virtual_per_class {
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push(global.means[c][j] + global.vars[c][j].sqrt() * z);
            }
            labels.push(c);
        }
    }
    if labels.is_empty() {
        warnings.push("no class statistics available; classifier left at initialization".into());
        return Ok((params, warnings));
    }
    let n = labels.len();
    let virtual_set = Dataset::new(Tensor::new(vec![n, d], values)?, labels, num_classes)?;
    let (trained, _) = train_local(
        &virtual_set,
        classifier,
        params,
        &TrainOpts {
            epochs: ccfg.epochs,
            learning_rate: opts.learning_rate,
            momentum: opts.momentum,
            batch_size: opts.batch_size,
            shuffle_seed: derive_seed(opts.seed, STREAM_CALIBRATE, 0, 0),
        },
    )?;
    Ok((trained, warnings))
}
