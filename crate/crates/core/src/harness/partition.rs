use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::engine::Dataset;
use crate::error::{param_err, Result};
use crate::rng::{self, Purpose};

const MAX_ATTEMPTS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionConfig {
    pub num_clients: usize,
    pub dirichlet_alpha: f64,
    pub seed: u64,
}

fn dirichlet<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| crate::Error::Parameter(format!("dirichlet alpha {alpha}: {e}")))?;
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        // every draw underflowed; a degenerate point mass on one client
        let mut v = vec![0.0; n];
        v[rng.random_range(0..n)] = 1.0;
        return Ok(v);
    }
    Ok(draws.into_iter().map(|d| d / total).collect())
}

/// Split `indices` (already shuffled) among clients by the proportions.
fn split_by(indices: &[usize], proportions: &[f64], out: &mut [Vec<usize>]) {
    let m = indices.len();
    let mut start = 0usize;
    let mut cum = 0.0;
    for (client, p) in proportions.iter().enumerate() {
        cum += p;
        let end = if client + 1 == proportions.len() {
            m
        } else {
            ((cum * m as f64).round() as usize).clamp(start, m)
        };
        out[client].extend_from_slice(&indices[start..end]);
        start = end;
    }
}

/// Row indices owned by each client.
///
/// Labelled data gets per-label Dirichlet proportions (label skew); real
/// targets get one Dirichlet draw over sample shares (quantity skew).
/// Redraws until every client holds at least one sample.
pub fn dirichlet_partition_indices(
    dataset: &Dataset,
    config: &PartitionConfig,
) -> Result<Vec<Vec<usize>>> {
    let n = config.num_clients;
    if n == 0 {
        return param_err("num_clients must be >= 1");
    }
    if config.dirichlet_alpha <= 0.0 || !config.dirichlet_alpha.is_finite() {
        return param_err(format!(
            "dirichlet alpha must be > 0, got {}",
            config.dirichlet_alpha
        ));
    }
    if dataset.len() < n {
        return param_err(format!(
            "{} samples cannot give each of {n} clients one sample",
            dataset.len()
        ));
    }
    let groups: Vec<Vec<usize>> = match dataset.labels() {
        Some(labels) => {
            let classes = dataset.num_classes().unwrap_or(0);
            let mut g = vec![Vec::new(); classes];
            for (i, &l) in labels.iter().enumerate() {
                g[l].push(i);
            }
            g.retain(|v| !v.is_empty());
            g
        }
        None => vec![(0..dataset.len()).collect()],
    };
    for attempt in 0..MAX_ATTEMPTS {
        let mut r = rng::derive(config.seed, Purpose::Partition, attempt, 0);
        let mut parts = vec![Vec::new(); n];
        for group in &groups {
            let mut idx = group.clone();
            idx.shuffle(&mut r);
            let q = dirichlet(config.dirichlet_alpha, n, &mut r)?;
            split_by(&idx, &q, &mut parts);
        }
        if parts.iter().all(|p| !p.is_empty()) {
            for p in &mut parts {
                p.sort_unstable();
            }
            return Ok(parts);
        }
        log::debug!("partition attempt {attempt} left a client empty; redrawing");
    }
    param_err(format!(
        "could not give every client a sample after {MAX_ATTEMPTS} Dirichlet draws (alpha {})",
        config.dirichlet_alpha
    ))
}

pub fn dirichlet_partition(dataset: &Dataset, config: &PartitionConfig) -> Result<Vec<Dataset>> {
    Ok(dirichlet_partition_indices(dataset, config)?
        .iter()
        .map(|idx| dataset.subset(idx))
        .collect())
}
