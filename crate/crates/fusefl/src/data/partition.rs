//! Latent Dirichlet Sampling: non-IID client splits.
//!
//! For each class, client proportions are drawn from Dirichlet(alpha * 1_M)
//! and the class's samples are split accordingly; lower alpha gives more
//! heterogeneous clients.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, STREAM_PARTITION};
use crate::stats::tv_distance;

#[derive(Debug, Clone)]
pub struct Partition {
    /// Disjoint index lists into the parent dataset, one per client.
    pub client_indices: Vec<Vec<usize>>,
    pub alpha: f64,
    pub seed: u64,
}

impl Partition {
    pub fn clients(&self) -> usize {
        self.client_indices.len()
    }

    /// Copy out per-client datasets.
    pub fn materialize(&self, parent: &Dataset) -> Vec<Dataset> {
        self.client_indices
            .iter()
            .map(|idx| parent.subset(idx))
            .collect()
    }

    /// Per-client label histograms.
    pub fn label_histograms(&self, parent: &Dataset) -> Vec<Vec<usize>> {
        self.client_indices
            .iter()
            .map(|idx| {
                let mut counts = vec![0usize; parent.num_classes];
                for &i in idx {
                    counts[parent.labels[i]] += 1;
                }
                counts
            })
            .collect()
    }

    /// Mean total-variation distance between client label distributions and
    /// the global one; higher means more heterogeneous.
    pub fn mean_label_tv(&self, parent: &Dataset) -> f64 {
        let global = parent.label_histogram();
        let n: usize = global.iter().sum();
        let global_p: Vec<f64> = global.iter().map(|&c| c as f64 / n as f64).collect();
        let hists = self.label_histograms(parent);
        let mut total = 0.0;
        for h in &hists {
            let m: usize = h.iter().sum();
            let p: Vec<f64> = h.iter().map(|&c| c as f64 / m.max(1) as f64).collect();
            total += tv_distance(&p, &global_p);
        }
        total / hists.len() as f64
    }
}

/// Sample a Dirichlet(alpha * 1_m) vector via normalized Gamma draws.
fn dirichlet_proportions<R: rand::Rng>(rng: &mut R, m: usize, alpha: f64) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::Config(format!("invalid Dirichlet alpha {alpha}: {e}")))?;
    for _ in 0..16 {
        let draws: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum.is_finite() && sum > 0.0 {
            return Ok(draws.into_iter().map(|d| d / sum).collect());
        }
        // tiny alpha can underflow every draw to zero; redraw
    }
    Err(Error::Partition(format!(
        "Dirichlet sampling degenerate at alpha={alpha}"
    )))
}

/// Partition a dataset across `clients` by per-class Dirichlet proportions.
/// The whole partition is resampled (with a derived seed) until every client
/// holds at least `min_per_client` samples; 100 failures is an error.
pub fn dirichlet_partition(
    dataset: &Dataset,
    clients: usize,
    alpha: f64,
    seed: u64,
    min_per_client: usize,
) -> Result<Partition> {
    if clients == 0 {
        return Err(Error::Config("need at least one client".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Config("alpha must be positive".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Partition("cannot partition an empty dataset".into()));
    }
    if min_per_client * clients > dataset.len() {
        return Err(Error::Partition(format!(
            "{} samples cannot give {clients} clients {min_per_client} each",
            dataset.len()
        )));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y].push(i);
    }

    for attempt in 0..100u64 {
        let mut rng = rng_from(derive_seed(seed, STREAM_PARTITION, attempt, 0));
        let mut client_indices: Vec<Vec<usize>> = vec![Vec::new(); clients];
        for class_idx in &by_class {
            if class_idx.is_empty() {
                continue;
            }
            let mut idx = class_idx.clone();
            idx.shuffle(&mut rng);
            let p = dirichlet_proportions(&mut rng, clients, alpha)?;
            // cumulative boundaries, final boundary pinned to the end
            let n = idx.len();
            let mut start = 0usize;
            let mut cum = 0.0;
            for (m, &pm) in p.iter().enumerate() {
                cum += pm;
                let end = if m + 1 == clients {
                    n
                } else {
                    ((cum * n as f64).floor() as usize).min(n)
                };
                client_indices[m].extend_from_slice(&idx[start..end.max(start)]);
                start = end.max(start);
            }
        }
        if client_indices.iter().all(|c| c.len() >= min_per_client) {
            return Ok(Partition {
                client_indices,
                alpha,
                seed,
            });
        }
    }
    Err(Error::Partition(format!(
        "could not give every client {min_per_client} samples in 100 attempts (alpha={alpha})"
    )))
}
