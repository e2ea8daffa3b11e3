//! The one-shot pipeline: local ERM, server-side clustering of the local
//! models, cluster-wise averaging. Baselines and IFCA live in submodules.

mod baselines;
mod ifca;

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    clusterpath_select, convex_cluster, estimate_k, kmeans_pp, recovery_interval, spectral_kmeans,
    spectral_kmeans_part1, ClusteringResult, ClusterpathConfig, KMetric, PointSet, DEFAULT_RESTARTS, DEFAULT_TOL,
};
use crate::data::FederatedDataset;
use crate::erm::{solve_erm_exact, solve_erm_sgd, LocalModel, LossSpec, SgdConfig};
use crate::linalg::Vector;
use crate::rng::{derive_seed, substream, Domain};
use crate::{Error, Result};

pub use baselines::{
    baseline_cluster_oracle, baseline_local, baseline_local_from, baseline_naive, baseline_naive_from,
    baseline_oracle_avg, baseline_oracle_avg_from, given_clustering,
};
pub use ifca::{ifca_run, noisy_init, random_init, shell_init, IfcaConfig, IfcaMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClusteringAlgo {
    /// Convex clustering at a fixed λ.
    ConvexFixed { lambda: f64 },
    /// Convex clustering with λ drawn uniformly from the recovery interval
    /// computed on the true clustering (its upper end when the interval is
    /// empty). Oracle-tuned: it reads the ground truth.
    ConvexTruthInterval,
    /// Convex clustering with λ chosen along the clusterpath.
    Clusterpath {
        #[serde(default)]
        path: ClusterpathConfig,
    },
    KmeansSpectral { k: usize },
    KmeansPp {
        k: usize,
        #[serde(default = "default_restarts")]
        restarts: usize,
    },
    KmeansEstimated { k_max: usize, metric: KMetric },
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ErmMode {
    #[default]
    Exact,
    Sgd { sgd: SgdConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub clustering: ClusteringAlgo,
    #[serde(default)]
    pub erm: ErmMode,
    /// Stop spectral K-means after its first part.
    #[serde(default)]
    pub partial_spectral: bool,
    /// With SGD local solves, also compute exact solutions to report `ε̂`.
    #[serde(default)]
    pub diagnostic: bool,
    #[serde(default)]
    pub seed: u64,
}

impl ProtocolConfig {
    pub fn new(clustering: ClusteringAlgo) -> Self {
        ProtocolConfig { clustering, erm: ErmMode::Exact, partial_spectral: false, diagnostic: false, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.partial_spectral && !matches!(self.clustering, ClusteringAlgo::KmeansSpectral { .. }) {
            return Err(Error::config("partial_spectral", "only valid with kmeans_spectral"));
        }
        match &self.clustering {
            ClusteringAlgo::ConvexFixed { lambda } if !(*lambda > 0.0) => {
                return Err(Error::config("lambda", "must be positive"))
            }
            ClusteringAlgo::Clusterpath { path } => path.validate()?,
            ClusteringAlgo::KmeansSpectral { k } | ClusteringAlgo::KmeansPp { k, .. } if *k == 0 => {
                return Err(Error::config("k", "must be positive"))
            }
            ClusteringAlgo::KmeansEstimated { k_max, .. } if *k_max == 0 => {
                return Err(Error::config("k_max", "must be positive"))
            }
            _ => {}
        }
        if let ErmMode::Sgd { sgd } = &self.erm {
            sgd.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOutput {
    /// Model handed back to each user, indexed by user id.
    pub per_user_models: Vec<Vector>,
    pub server_clustering: ClusteringResult,
    /// Local models before aggregation (empty for IFCA).
    pub local_models: Vec<LocalModel>,
    pub comm_rounds: usize,
    pub has_intercept: bool,
    pub classification: bool,
    /// `max_i ||θ_i^T - θ̂_i||` in diagnostic SGD runs.
    pub eps_hat: Option<f64>,
}

impl ProtocolOutput {
    /// Writes `output.json` (clustering and metadata) and `models.csv`
    /// (`user,param_0,...`).
    pub fn export(&self, dir: &Path) -> Result<()> {
        let io = |p: &Path, e: &dyn std::fmt::Display| Error::Io { path: p.display().to_string(), reason: e.to_string() };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, &e))?;
        #[derive(Serialize)]
        struct Manifest {
            comm_rounds: usize,
            has_intercept: bool,
            classification: bool,
            eps_hat: Option<f64>,
            clustering: serde_json::Value,
        }
        let manifest = Manifest {
            comm_rounds: self.comm_rounds,
            has_intercept: self.has_intercept,
            classification: self.classification,
            eps_hat: self.eps_hat,
            clustering: serde_json::from_str(&self.server_clustering.to_json()?).map_err(|e| Error::arg(e.to_string()))?,
        };
        let path = dir.join("output.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::arg(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| io(&path, &e))?;
        let path = dir.join("models.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, &e))?;
        let p = self.per_user_models.first().map_or(0, |v| v.len());
        let mut header = vec!["user".to_string()];
        header.extend((0..p).map(|j| format!("param_{j}")));
        w.write_record(&header).map_err(|e| io(&path, &e))?;
        for (u, model) in self.per_user_models.iter().enumerate() {
            let mut row = vec![u.to_string()];
            row.extend(model.iter().map(|v| format!("{v:e}")));
            w.write_record(&row).map_err(|e| io(&path, &e))?;
        }
        w.flush().map_err(|e| io(&path, &e))
    }
}

/// Step 1 on every user, in parallel.
pub fn solve_local(data: &FederatedDataset, loss: &LossSpec, erm: &ErmMode) -> Result<Vec<LocalModel>> {
    data.shards
        .par_iter()
        .map(|shard| match erm {
            ErmMode::Exact => solve_erm_exact(loss, shard),
            ErmMode::Sgd { sgd } => solve_erm_sgd(loss, shard, sgd),
        })
        .collect()
}

pub fn model_points(models: &[LocalModel]) -> Result<PointSet> {
    let rows: Vec<Vector> = models.iter().map(|m| m.params.clone()).collect();
    let mut pts = PointSet::from_rows(&rows)?;
    pts.ids = models.iter().map(|m| m.user_id).collect();
    Ok(pts)
}

/// Cluster means of the parameter vectors, summed in user order.
pub(crate) fn average_by(models: &[Vector], assignment: &[usize], k: usize) -> Vec<Vector> {
    let p = models[0].len();
    let mut sums = vec![Vector::zeros(p); k];
    let mut counts = vec![0usize; k];
    for (model, &a) in models.iter().zip(assignment) {
        sums[a] += model;
        counts[a] += 1;
    }
    sums.into_iter().zip(counts).map(|(s, c)| s / c as f64).collect()
}

pub(crate) fn broadcast(centers: &[Vector], assignment: &[usize]) -> Vec<Vector> {
    assignment.iter().map(|&a| centers[a].clone()).collect()
}

/// The λ used by the oracle-tuned exact variant.
pub fn truth_interval_lambda(pts: &PointSet, truth: &[usize], seed: u64) -> Result<f64> {
    let (lo, hi) = recovery_interval(pts, truth)?;
    if !hi.is_finite() {
        return Err(Error::arg("the recovery interval needs at least two true clusters"));
    }
    if lo < hi {
        let mut rng = substream(seed, Domain::Lambda, 0);
        Ok(lo + (hi - lo) * rng.random::<f64>())
    } else {
        Ok(hi)
    }
}

/// Step 2: cluster the local models.
pub fn cluster_models(
    pts: &PointSet,
    cfg: &ProtocolConfig,
    data: &FederatedDataset,
) -> Result<ClusteringResult> {
    let seed = derive_seed(cfg.seed, Domain::KmeansPP, 0);
    match &cfg.clustering {
        ClusteringAlgo::ConvexFixed { lambda } => convex_cluster(pts, *lambda, DEFAULT_TOL),
        ClusteringAlgo::ConvexTruthInterval => {
            let lambda = truth_interval_lambda(pts, &data.true_assignment, cfg.seed)?;
            convex_cluster(pts, lambda, DEFAULT_TOL)
        }
        ClusteringAlgo::Clusterpath { path } => clusterpath_select(pts, path).map(|(_, r, _)| r),
        ClusteringAlgo::KmeansSpectral { k } if cfg.partial_spectral => spectral_kmeans_part1(pts, *k, seed),
        ClusteringAlgo::KmeansSpectral { k } => spectral_kmeans(pts, *k, seed),
        ClusteringAlgo::KmeansPp { k, restarts } => kmeans_pp(pts, *k, *restarts, seed),
        ClusteringAlgo::KmeansEstimated { k_max, metric } => {
            let k = estimate_k(pts, *k_max, *metric, seed)?;
            kmeans_pp(pts, k, DEFAULT_RESTARTS, seed)
        }
    }
}

/// Steps 2 to 4 on already computed local models.
pub fn odcl_from_local(
    data: &FederatedDataset,
    loss: &LossSpec,
    local: Vec<LocalModel>,
    cfg: &ProtocolConfig,
) -> Result<ProtocolOutput> {
    cfg.validate()?;
    let pts = model_points(&local)?;
    let clustering = cluster_models(&pts, cfg, data)?;
    let params: Vec<Vector> = local.iter().map(|m| m.params.clone()).collect();
    let centers = average_by(&params, &clustering.assignment, clustering.k_prime());
    Ok(ProtocolOutput {
        per_user_models: broadcast(&centers, &clustering.assignment),
        server_clustering: clustering,
        local_models: local,
        comm_rounds: 1,
        has_intercept: loss.has_intercept,
        classification: loss.is_classification(),
        eps_hat: None,
    })
}

/// The full one-shot pipeline.
pub fn odcl_run(data: &FederatedDataset, loss: &LossSpec, cfg: &ProtocolConfig) -> Result<ProtocolOutput> {
    cfg.validate()?;
    data.validate()?;
    let local = solve_local(data, loss, &cfg.erm)?;
    let eps_hat = match (&cfg.erm, cfg.diagnostic) {
        (ErmMode::Sgd { .. }, true) => {
            let exact = solve_local(data, loss, &ErmMode::Exact)?;
            Some(local.iter().zip(&exact).map(|(a, b)| (&a.params - &b.params).norm()).fold(0.0, f64::max))
        }
        _ => None,
    };
    let mut out = odcl_from_local(data, loss, local, cfg)?;
    out.eps_hat = eps_hat;
    Ok(out)
}

/// The pipeline with projected-SGD local solves.
pub fn odcl_inexact_run(data: &FederatedDataset, loss: &LossSpec, cfg: &ProtocolConfig) -> Result<ProtocolOutput> {
    if !matches!(cfg.erm, ErmMode::Sgd { .. }) {
        return Err(Error::config("erm", "the inexact variant needs sgd local solves"));
    }
    odcl_run(data, loss, cfg)
}

/// The pipeline with part I of spectral K-means as the clustering step.
pub fn odcl_partial_spectral_run(data: &FederatedDataset, loss: &LossSpec, k: usize, seed: u64) -> Result<ProtocolOutput> {
    let cfg = ProtocolConfig {
        clustering: ClusteringAlgo::KmeansSpectral { k },
        erm: ErmMode::Exact,
        partial_spectral: true,
        diagnostic: false,
        seed,
    };
    odcl_run(data, loss, &cfg)
}
