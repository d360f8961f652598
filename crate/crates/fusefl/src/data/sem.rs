//! Causal synthetic data generator.
//!
//! Each sample is built from two blocks: an invariant block determined by the
//! class (the same template on every client) and a spurious block that, with
//! probability rho, is a client-and-class-specific template — a correlation
//! that only holds inside that client's data. Test samples always draw the
//! spurious block at random, breaking the correlation.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{derive_seed, rng_from, STREAM_SEM};

#[derive(Debug, Clone)]
pub struct SemConfig {
    pub num_classes: usize,
    /// Width of the invariant (class-determined) block. May be zero.
    pub inv_dim: usize,
    /// Width of the spurious (client-local) block. May be zero.
    pub spu_dim: usize,
    /// Probability rho that a client sample carries its client/class template.
    pub spurious_strength: f64,
    pub noise_std: f64,
    pub samples_per_client: usize,
    pub clients: usize,
    pub test_samples: usize,
    /// Per-client label skew: class proportions drawn from Dirichlet(alpha).
    /// None gives uniform labels on every client.
    pub label_alpha: Option<f64>,
    /// Emit [1, side, side] images instead of flat vectors; requires
    /// inv_dim + spu_dim == side^2.
    pub image_side: Option<usize>,
    /// Template magnitudes: entries are uniform in [-scale, scale].
    pub inv_scale: f64,
    pub spu_scale: f64,
}

impl Default for SemConfig {
    fn default() -> Self {
        SemConfig {
            num_classes: 10,
            inv_dim: 8,
            spu_dim: 8,
            spurious_strength: 0.8,
            noise_std: 0.3,
            samples_per_client: 500,
            clients: 5,
            test_samples: 2000,
            label_alpha: None,
            image_side: None,
            inv_scale: 1.5,
            spu_scale: 1.5,
        }
    }
}

impl SemConfig {
    pub fn feature_dim(&self) -> usize {
        self.inv_dim + self.spu_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.feature_dim() == 0 {
            return Err(Error::Config(
                "inv_dim + spu_dim must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.spurious_strength) {
            return Err(Error::Config(format!(
                "spurious_strength must be in [0,1], got {}",
                self.spurious_strength
            )));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        if self.clients == 0 || self.samples_per_client == 0 || self.test_samples == 0 {
            return Err(Error::Config(
                "clients, samples_per_client and test_samples must be positive".into(),
            ));
        }
        if let Some(alpha) = self.label_alpha {
            if !(alpha > 0.0) {
                return Err(Error::Config("label alpha must be positive".into()));
            }
        }
        if let Some(side) = self.image_side {
            if side * side != self.feature_dim() {
                return Err(Error::Config(format!(
                    "image side {side} wants {} features, config has {}",
                    side * side,
                    self.feature_dim()
                )));
            }
        }
        Ok(())
    }
}

/// The frozen template library behind a generated dataset family.
#[derive(Debug, Clone)]
pub struct SemTemplates {
    /// C invariant templates, one per class.
    pub class_templates: Vec<Vec<f64>>,
    /// M x C spurious templates, one per (client, class).
    pub spurious_templates: Vec<Vec<Vec<f64>>>,
}

impl SemTemplates {
    /// Total number of spurious templates (M * C).
    pub fn library_len(&self) -> usize {
        self.spurious_templates.len() * self.spurious_templates.first().map_or(0, Vec::len)
    }

    fn library_entry(&self, id: usize) -> &[f64] {
        let per_client = self.spurious_templates[0].len();
        &self.spurious_templates[id / per_client][id % per_client]
    }
}

/// Rebuild the template library for (cfg, seed) without generating samples.
pub fn sem_templates(cfg: &SemConfig, seed: u64) -> Result<SemTemplates> {
    cfg.validate()?;
    let mut rng = rng_from(derive_seed(seed, STREAM_SEM, 0, 0));
    let class_templates = (0..cfg.num_classes)
        .map(|_| {
            (0..cfg.inv_dim)
                .map(|_| rng.random_range(-cfg.inv_scale..=cfg.inv_scale))
                .collect()
        })
        .collect();
    let spurious_templates = (0..cfg.clients)
        .map(|_| {
            (0..cfg.num_classes)
                .map(|_| {
                    (0..cfg.spu_dim)
                        .map(|_| rng.random_range(-cfg.spu_scale..=cfg.spu_scale))
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(SemTemplates {
        class_templates,
        spurious_templates,
    })
}

fn sample_label_distribution<R: Rng>(rng: &mut R, classes: usize, alpha: Option<f64>) -> Vec<f64> {
    match alpha {
        None => vec![1.0 / classes as f64; classes],
        Some(a) => {
            let gamma = Gamma::new(a, 1.0).expect("validated alpha");
            loop {
                let draws: Vec<f64> = (0..classes).map(|_| gamma.sample(rng)).collect();
                let sum: f64 = draws.iter().sum();
                if sum.is_finite() && sum > 0.0 {
                    return draws.into_iter().map(|d| d / sum).collect();
                }
            }
        }
    }
}

fn draw_class<R: Rng>(rng: &mut R, dist: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (c, &p) in dist.iter().enumerate() {
        cum += p;
        if u < cum {
            return c;
        }
    }
    dist.len() - 1
}

struct SampleSink {
    values: Vec<f64>,
    labels: Vec<usize>,
}

#[allow(clippy::too_many_arguments)]
fn draw_sample<R: Rng>(
    rng: &mut R,
    cfg: &SemConfig,
    templates: &SemTemplates,
    client: Option<usize>,
    label_dist: &[f64],
    sink: &mut SampleSink,
) {
    let y = draw_class(rng, label_dist);
    let correlated = match client {
        Some(_) => rng.random::<f64>() < cfg.spurious_strength,
        None => false,
    };
    let spu: Vec<f64> = if correlated {
        templates.spurious_templates[client.expect("client set")][y].clone()
    } else {
        // label-independent draw: a fresh vector from the same range as the
        // templates, so the spurious block carries no class signal
        (0..cfg.spu_dim)
            .map(|_| rng.random_range(-cfg.spu_scale..=cfg.spu_scale))
            .collect()
    };
    for &v in &templates.class_templates[y] {
        let noise: f64 = StandardNormal.sample(rng);
        sink.values.push(v + cfg.noise_std * noise);
    }
    for &v in &spu {
        let noise: f64 = StandardNormal.sample(rng);
        sink.values.push(v + cfg.noise_std * noise);
    }
    sink.labels.push(y);
}

fn to_dataset(cfg: &SemConfig, sink: SampleSink) -> Result<Dataset> {
    let n = sink.labels.len();
    let shape = match cfg.image_side {
        Some(side) => vec![n, 1, side, side],
        None => vec![n, cfg.feature_dim()],
    };
    Dataset::new(Tensor::new(shape, sink.values)?, sink.labels, cfg.num_classes)
}

/// Generate M client datasets plus a test set with the spurious correlation
/// broken and uniform labels. Deterministic given (cfg, seed).
pub fn synth_sem(cfg: &SemConfig, seed: u64) -> Result<(Vec<Dataset>, Dataset)> {
    cfg.validate()?;
    let templates = sem_templates(cfg, seed)?;

    let mut clients = Vec::with_capacity(cfg.clients);
    for m in 0..cfg.clients {
        let mut rng = rng_from(derive_seed(seed, STREAM_SEM, m as u64 + 1, 0));
        let label_dist = sample_label_distribution(&mut rng, cfg.num_classes, cfg.label_alpha);
        let mut sink = SampleSink {
            values: Vec::with_capacity(cfg.samples_per_client * cfg.feature_dim()),
            labels: Vec::with_capacity(cfg.samples_per_client),
        };
        for _ in 0..cfg.samples_per_client {
            draw_sample(&mut rng, cfg, &templates, Some(m), &label_dist, &mut sink);
        }
        clients.push(to_dataset(cfg, sink)?);
    }

    let mut rng = rng_from(derive_seed(seed, STREAM_SEM, 0, 1));
    let uniform = vec![1.0 / cfg.num_classes as f64; cfg.num_classes];
    let mut sink = SampleSink {
        values: Vec::with_capacity(cfg.test_samples * cfg.feature_dim()),
        labels: Vec::with_capacity(cfg.test_samples),
    };
    for _ in 0..cfg.test_samples {
        draw_sample(&mut rng, cfg, &templates, None, &uniform, &mut sink);
    }
    let test = to_dataset(cfg, sink)?;
    Ok((clients, test))
}

/// Recover the spurious-template library index of every sample by nearest
/// template on the spurious block (ties to the lowest id). Used to audit the
/// generator's independence properties.
pub fn recover_spu_template_ids(
    ds: &Dataset,
    cfg: &SemConfig,
    templates: &SemTemplates,
) -> Vec<usize> {
    let dim = cfg.feature_dim();
    let mut out = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let sample = ds.inputs.sample(i);
        let spu = &sample[dim - cfg.spu_dim..];
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for id in 0..templates.library_len() {
            let t = templates.library_entry(id);
            let d: f64 = t
                .iter()
                .zip(spu)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d {
                best_d = d;
                best = id;
            }
        }
        out.push(best);
    }
    out
}
