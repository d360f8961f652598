//! Run configuration: flat `section.key = value` text files.
//!
//! Unknown and duplicate keys are rejected; every default is materialized
//! into the resolved map so emitted run metadata is self-describing.

use std::collections::BTreeMap;

use crate::data::{BackdoorConfig, SemConfig};
use crate::error::{Error, Result};
use crate::federation::{Algorithm, CalibrationConfig, CovarianceKind};
use crate::model::{AdaptorKind, ScalingPolicy};
use crate::probes::ProbeConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Sem,
    Idx,
}

/// Every tunable of a run, as parsed from the config file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub output_dir: String,

    pub source: DataSource,
    pub idx_images: String,
    pub idx_labels: String,
    pub idx_test_images: String,
    pub idx_test_labels: String,
    pub partition_alpha: f64,
    pub min_per_client: usize,

    pub sem: SemConfig,
    /// Per-client label skew alpha for generated data; 0 keeps labels uniform.
    pub sem_label_alpha: f64,

    pub algorithm: Algorithm,
    pub clients: usize,
    pub blocks: usize,
    pub epochs: usize,
    pub rounds: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub adaptor: AdaptorKind,
    pub scaling: ScalingPolicy,
    pub count_downlink: bool,

    pub template_kind: String,
    pub base_width: usize,
    pub hetero_widths: Vec<usize>,

    pub backdoor_clients: Vec<usize>,
    pub backdoor_patch_side: usize,
    pub backdoor_intensity: (f64, f64),

    pub calibration: CalibrationConfig,
    pub probe: ProbeConfig,

    resolved: BTreeMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    "run.name",
    "run.seed",
    "run.output_dir",
    "data.source",
    "data.idx.images",
    "data.idx.labels",
    "data.idx.test_images",
    "data.idx.test_labels",
    "data.partition.alpha",
    "data.partition.min_per_client",
    "data.sem.classes",
    "data.sem.inv_dim",
    "data.sem.spu_dim",
    "data.sem.spurious_strength",
    "data.sem.noise_std",
    "data.sem.samples_per_client",
    "data.sem.test_samples",
    "data.sem.label_alpha",
    "data.sem.image_side",
    "data.sem.inv_scale",
    "data.sem.spu_scale",
    "fed.algorithm",
    "fed.clients",
    "fed.blocks",
    "fed.epochs",
    "fed.rounds",
    "fed.lr",
    "fed.momentum",
    "fed.batch_size",
    "fed.adaptor",
    "fed.scaling",
    "fed.width",
    "fed.count_downlink",
    "model.template",
    "model.base_width",
    "model.hetero_widths",
    "backdoor.clients",
    "backdoor.patch_side",
    "backdoor.intensity_lo",
    "backdoor.intensity_hi",
    "calibrate.virtual_per_class",
    "calibrate.epochs",
    "calibrate.covariance",
    "probe.epochs",
    "probe.lr",
];

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "line {}: unknown key '{key}'",
                lineno + 1
            )));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!(
                "line {}: duplicate key '{key}'",
                lineno + 1
            )));
        }
    }
    Ok(map)
}

struct Resolver {
    given: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Resolver {
    fn take(&mut self, key: &str, default: &str) -> String {
        let v = self
            .given
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string());
        self.resolved.insert(key.to_string(), v.clone());
        v
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: &str) -> Result<T> {
        let v = self.take(key, default);
        v.parse::<T>()
            .map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
    }

    fn parse_list(&mut self, key: &str) -> Result<Vec<usize>> {
        let v = self.take(key, "");
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("invalid list entry '{s}' for {key}")))
            })
            .collect()
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut r = Resolver {
            given: parse_kv(text)?,
            resolved: BTreeMap::new(),
        };

        let name = r.take("run.name", "run");
        let seed: u64 = r.parse("run.seed", "0")?;
        let output_dir = r.take("run.output_dir", "out");

        let source = match r.take("data.source", "sem").as_str() {
            "sem" => DataSource::Sem,
            "idx" => DataSource::Idx,
            other => {
                return Err(Error::Config(format!(
                    "data.source must be sem or idx, got '{other}'"
                )))
            }
        };
        let idx_images = r.take("data.idx.images", "");
        let idx_labels = r.take("data.idx.labels", "");
        let idx_test_images = r.take("data.idx.test_images", "");
        let idx_test_labels = r.take("data.idx.test_labels", "");
        let partition_alpha: f64 = r.parse("data.partition.alpha", "0.5")?;

        let algorithm = Algorithm::parse(&r.take("fed.algorithm", "fusefl"))?;
        let clients: usize = r.parse("fed.clients", "5")?;
        let blocks: usize = r.parse("fed.blocks", "4")?;
        let epochs: usize = r.parse("fed.epochs", "40")?;
        let rounds: usize = r.parse("fed.rounds", "10")?;
        let learning_rate: f64 = r.parse("fed.lr", "0.01")?;
        let momentum: f64 = r.parse("fed.momentum", "0.9")?;
        let batch_size: usize = r.parse("fed.batch_size", "128")?;
        // clients below this size force a partition resample
        let default_min = (2 * batch_size).to_string();
        let min_per_client: usize = r.parse("data.partition.min_per_client", &default_min)?;
        let adaptor = match r.take("fed.adaptor", "linear_mix").as_str() {
            "average" => AdaptorKind::Average,
            "linear_mix" => AdaptorKind::LinearMix,
            other => {
                return Err(Error::Config(format!(
                    "fed.adaptor must be average or linear_mix, got '{other}'"
                )))
            }
        };
        let width: usize = r.parse("fed.width", "0")?;
        let scaling = match r.take("fed.scaling", "sqrt_m").as_str() {
            "sqrt_m" => ScalingPolicy::SqrtM,
            "explicit" => {
                if width == 0 {
                    return Err(Error::Config(
                        "fed.scaling = explicit requires fed.width >= 1".into(),
                    ));
                }
                ScalingPolicy::Explicit(width)
            }
            other => {
                return Err(Error::Config(format!(
                    "fed.scaling must be sqrt_m or explicit, got '{other}'"
                )))
            }
        };
        let count_downlink: bool = r.parse("fed.count_downlink", "false")?;

        let sem_label_alpha: f64 = r.parse("data.sem.label_alpha", "0")?;
        let image_side: usize = r.parse("data.sem.image_side", "0")?;
        let sem = SemConfig {
            num_classes: r.parse("data.sem.classes", "10")?,
            inv_dim: r.parse("data.sem.inv_dim", "8")?,
            spu_dim: r.parse("data.sem.spu_dim", "8")?,
            spurious_strength: r.parse("data.sem.spurious_strength", "0.8")?,
            noise_std: r.parse("data.sem.noise_std", "0.3")?,
            samples_per_client: r.parse("data.sem.samples_per_client", "500")?,
            clients,
            test_samples: r.parse("data.sem.test_samples", "2000")?,
            label_alpha: if sem_label_alpha > 0.0 {
                Some(sem_label_alpha)
            } else {
                None
            },
            image_side: if image_side > 0 {
                Some(image_side)
            } else {
                None
            },
            inv_scale: r.parse("data.sem.inv_scale", "1.5")?,
            spu_scale: r.parse("data.sem.spu_scale", "1.5")?,
        };

        let template_kind = r.take("model.template", "mlp");
        if template_kind != "mlp" && template_kind != "conv" {
            return Err(Error::Config(format!(
                "model.template must be mlp or conv, got '{template_kind}'"
            )));
        }
        let base_width: usize = r.parse("model.base_width", "64")?;
        let hetero_widths = r.parse_list("model.hetero_widths")?;
        if !hetero_widths.is_empty() && hetero_widths.len() != clients {
            return Err(Error::Config(format!(
                "model.hetero_widths lists {} widths for {clients} clients",
                hetero_widths.len()
            )));
        }

        let backdoor_clients = r.parse_list("backdoor.clients")?;
        let backdoor_patch_side: usize = r.parse("backdoor.patch_side", "10")?;
        let backdoor_intensity = (
            r.parse("backdoor.intensity_lo", "0.5")?,
            r.parse("backdoor.intensity_hi", "1.0")?,
        );
        if let Some(&bad) = backdoor_clients.iter().find(|&&c| c >= clients) {
            return Err(Error::Config(format!(
                "backdoor client {bad} out of range for {clients} clients"
            )));
        }

        let calibration = CalibrationConfig {
            virtual_per_class: r.parse("calibrate.virtual_per_class", "100")?,
            epochs: r.parse("calibrate.epochs", "10")?,
            covariance: match r.take("calibrate.covariance", "diagonal").as_str() {
                "diagonal" => CovarianceKind::Diagonal,
                other => {
                    return Err(Error::Config(format!(
                        "calibrate.covariance supports only 'diagonal', got '{other}'"
                    )))
                }
            },
        };
        let probe = ProbeConfig {
            epochs: r.parse("probe.epochs", "10")?,
            learning_rate: r.parse("probe.lr", "0.1")?,
            batch_size,
            seed,
        };

        if source == DataSource::Idx && (idx_images.is_empty() || idx_labels.is_empty()) {
            return Err(Error::Config(
                "data.source = idx requires data.idx.images and data.idx.labels".into(),
            ));
        }

        Ok(RunConfig {
            name,
            seed,
            output_dir,
            source,
            idx_images,
            idx_labels,
            idx_test_images,
            idx_test_labels,
            partition_alpha,
            min_per_client,
            sem,
            sem_label_alpha,
            algorithm,
            clients,
            blocks,
            epochs,
            rounds,
            learning_rate,
            momentum,
            batch_size,
            adaptor,
            scaling,
            count_downlink,
            template_kind,
            base_width,
            hetero_widths,
            backdoor_clients,
            backdoor_patch_side,
            backdoor_intensity,
            calibration,
            probe,
            resolved: r.resolved,
        })
    }

    /// Override the seed (environment variable hook); keeps the resolved map
    /// in sync.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.probe.seed = seed;
        self.resolved.insert("run.seed".into(), seed.to_string());
    }

    /// Override the learning rate (grid-search hook).
    pub fn override_lr(&mut self, lr: f64) {
        self.learning_rate = lr;
        self.resolved.insert("fed.lr".into(), lr.to_string());
    }

    pub fn override_output_dir(&mut self, dir: &str) {
        self.output_dir = dir.to_string();
        self.resolved.insert("run.output_dir".into(), dir.into());
    }

    /// Every config key with its final (default-resolved) value.
    pub fn resolved_map(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }

    pub fn backdoor_config(&self) -> Option<BackdoorConfig> {
        if self.backdoor_clients.is_empty() {
            return None;
        }
        Some(BackdoorConfig {
            target_clients: self.backdoor_clients.iter().copied().collect(),
            patch_side: self.backdoor_patch_side,
            intensity_range: self.backdoor_intensity,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_materialized() {
        let cfg = RunConfig::parse("run.name = demo\n").unwrap();
        let map = cfg.resolved_map();
        assert_eq!(map.get("run.name").unwrap(), "demo");
        assert_eq!(map.get("fed.momentum").unwrap(), "0.9");
        assert_eq!(map.get("fed.batch_size").unwrap(), "128");
        // every known key resolved
        for key in KNOWN_KEYS {
            assert!(map.contains_key(*key), "missing {key}");
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse("run.nam = demo\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = RunConfig::parse("run.seed = 1\nrun.seed = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = RunConfig::parse("# comment\n\nrun.seed = 9 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn min_per_client_defaults_to_twice_batch() {
        let cfg = RunConfig::parse("fed.batch_size = 32\n").unwrap();
        assert_eq!(cfg.min_per_client, 64);
        let cfg = RunConfig::parse("data.partition.min_per_client = 5\n").unwrap();
        assert_eq!(cfg.min_per_client, 5);
    }

    #[test]
    fn explicit_scaling_needs_width() {
        assert!(RunConfig::parse("fed.scaling = explicit\n").is_err());
        let cfg = RunConfig::parse("fed.scaling = explicit\nfed.width = 32\n").unwrap();
        assert_eq!(cfg.scaling, ScalingPolicy::Explicit(32));
    }

    #[test]
    fn idx_source_requires_paths() {
        assert!(RunConfig::parse("data.source = idx\n").is_err());
    }
}
