//! Iterative federated clustering (IFCA), the multi-round baseline.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{average_by, broadcast, ProtocolOutput};
use crate::clustering::{Algorithm, ClusteringResult, Diagnostics, PointSet};
use crate::data::FederatedDataset;
use crate::erm::{grad, grad_rows, objective, project_weights, LossSpec};
use crate::linalg::Vector;
use crate::rng::{substream, Domain};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IfcaMode {
    /// Users run `local_steps` gradient steps from their chosen model and the
    /// server averages the results per estimated cluster. `batch: None` uses
    /// full-batch gradients.
    ModelAvg {
        #[serde(default = "default_local_steps")]
        local_steps: usize,
        #[serde(default = "default_batch")]
        batch: Option<usize>,
    },
    /// Users send full gradients at their chosen model; the server averages
    /// them per estimated cluster and takes one step.
    GradientAvg,
}

fn default_local_steps() -> usize {
    10
}

fn default_batch() -> Option<usize> {
    Some(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfcaConfig {
    pub step: f64,
    pub rounds: usize,
    pub mode: IfcaMode,
    #[serde(default)]
    pub seed: u64,
}

impl IfcaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::config("step", "must be positive and finite"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if let IfcaMode::ModelAvg { local_steps, batch } = self.mode {
            if local_steps == 0 {
                return Err(Error::config("local_steps", "must be at least 1"));
            }
            if batch == Some(0) {
                return Err(Error::config("batch", "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Index of the smallest value; the first one wins ties.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

pub fn ifca_run(data: &FederatedDataset, loss: &LossSpec, init: &[Vector], cfg: &IfcaConfig) -> Result<ProtocolOutput> {
    cfg.validate()?;
    loss.validate()?;
    data.validate()?;
    if init.is_empty() {
        return Err(Error::config("init", "need at least one model"));
    }
    let p = loss.param_dim(data.feature_dim);
    if let Some(bad) = init.iter().find(|v| v.len() != p) {
        return Err(Error::DimensionMismatch { expected: p, got: bad.len() });
    }
    let k = init.len();
    let m = data.num_users();
    let mut models = init.to_vec();
    let mut assignment = vec![0usize; m];
    let mut trace = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let updates: Vec<(usize, Vector)> = data
            .shards
            .par_iter()
            .enumerate()
            .map(|(u, shard)| -> Result<(usize, Vector)> {
                let losses: Vec<f64> = models
                    .iter()
                    .map(|th| objective(loss, th, &shard.features, &shard.labels))
                    .collect::<Result<_>>()?;
                let j = argmin(&losses);
                let update = match cfg.mode {
                    IfcaMode::GradientAvg => grad(loss, &models[j], &shard.features, &shard.labels)?,
                    IfcaMode::ModelAvg { local_steps, batch } => {
                        let mut rng = substream(cfg.seed, Domain::IfcaLocal, ((round as u64) << 32) | u as u64);
                        let mut th = models[j].clone();
                        let mut rows = vec![0usize; batch.unwrap_or(0)];
                        for _ in 0..local_steps {
                            let g = match batch {
                                None => grad(loss, &th, &shard.features, &shard.labels)?,
                                Some(_) => {
                                    for r in rows.iter_mut() {
                                        *r = rng.random_range(0..shard.len());
                                    }
                                    grad_rows(loss, &th, &shard.features, &shard.labels, &rows)?
                                }
                            };
                            th.axpy(-cfg.step, &g, 1.0);
                            project_weights(&mut th, loss.has_intercept, loss.radius);
                        }
                        th
                    }
                };
                Ok((j, update))
            })
            .collect::<Result<_>>()?;
        for (u, (j, _)) in updates.iter().enumerate() {
            assignment[u] = *j;
        }
        let vectors: Vec<Vector> = updates.into_iter().map(|(_, v)| v).collect();
        let means = average_by_present(&vectors, &assignment, k);
        for (c, mean) in means.into_iter().enumerate() {
            let Some(mean) = mean else { continue };
            match cfg.mode {
                IfcaMode::GradientAvg => {
                    models[c].axpy(-cfg.step, &mean, 1.0);
                    project_weights(&mut models[c], loss.has_intercept, loss.radius);
                }
                IfcaMode::ModelAvg { .. } => models[c] = mean,
            }
        }
        let total: f64 = data
            .shards
            .iter()
            .zip(&assignment)
            .map(|(s, &a)| objective(loss, &models[a], &s.features, &s.labels))
            .sum::<Result<f64>>()?;
        trace.push(total / m as f64);
    }
    let per_user_models = broadcast(&models, &assignment);
    let pts = PointSet::from_rows(&per_user_models)?;
    let mut diag = Diagnostics::new(Algorithm::Given);
    diag.iterations = cfg.rounds;
    diag.objective = trace.last().copied().unwrap_or(0.0);
    diag.objective_trace = trace;
    Ok(ProtocolOutput {
        per_user_models,
        server_clustering: ClusteringResult::from_assignment(&pts, &assignment, diag),
        local_models: Vec::new(),
        comm_rounds: cfg.rounds,
        has_intercept: loss.has_intercept,
        classification: loss.is_classification(),
        eps_hat: None,
    })
}

/// Per-cluster means; `None` for clusters nobody picked.
fn average_by_present(vectors: &[Vector], assignment: &[usize], k: usize) -> Vec<Option<Vector>> {
    let mut used = vec![false; k];
    for &a in assignment {
        used[a] = true;
    }
    let means = average_by(vectors, assignment, k);
    means.into_iter().zip(used).map(|(v, u)| u.then_some(v)).collect()
}

fn unit_direction<R: Rng>(p: usize, rng: &mut R) -> Vector {
    loop {
        let v = Vector::from_fn(p, |_, _| StandardNormal.sample(rng));
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

/// Each true model displaced in a uniform random direction by a distance
/// drawn uniformly from `[D/5, D/3]`, where `D` is the smallest gap between
/// true models.
pub fn shell_init(true_models: &[Vector], seed: u64) -> Result<Vec<Vector>> {
    if true_models.len() < 2 {
        return Err(Error::arg("shell initialisation needs at least two true models"));
    }
    let mut gap = f64::INFINITY;
    for a in 0..true_models.len() {
        for b in a + 1..true_models.len() {
            gap = gap.min((&true_models[a] - &true_models[b]).norm());
        }
    }
    Ok(true_models
        .iter()
        .enumerate()
        .map(|(k, center)| {
            let mut rng = substream(seed, Domain::IfcaInit, k as u64);
            let r = rng.random_range(gap / 5.0..=gap / 3.0);
            center + unit_direction(center.len(), &mut rng) * r
        })
        .collect())
}

/// Centers plus independent `N(0, std^2)` noise on every coordinate.
pub fn noisy_init(centers: &[Vector], std: f64, seed: u64) -> Result<Vec<Vector>> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::config("std", e.to_string()))?;
    Ok(centers
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let mut rng = substream(seed, Domain::IfcaInit, k as u64);
            c.map(|x| x + normal.sample(&mut rng))
        })
        .collect())
}

/// `k` models with independent `N(0, scale^2)` coordinates.
pub fn random_init(k: usize, p: usize, scale: f64, seed: u64) -> Result<Vec<Vector>> {
    noisy_init(&vec![Vector::zeros(p); k], scale, seed)
}
