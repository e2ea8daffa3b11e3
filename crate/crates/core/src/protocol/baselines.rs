//! Reference methods: oracle averaging, the cluster oracle, local ERM and
//! naive averaging.

use rayon::prelude::*;

use super::{average_by, broadcast, solve_local, ErmMode, ProtocolOutput};
use crate::clustering::{Algorithm, ClusteringResult, Diagnostics, PointSet};
use crate::data::{FederatedDataset, UserShard};
use crate::erm::{solve_erm_exact, LocalModel, LossSpec};
use crate::linalg::{Matrix, Vector};
use crate::Result;

/// A clustering result for a fixed partition of the local models.
pub fn given_clustering(models: &[LocalModel], assignment: &[usize]) -> Result<ClusteringResult> {
    let rows: Vec<Vector> = models.iter().map(|m| m.params.clone()).collect();
    let pts = PointSet::from_rows(&rows)?;
    Ok(ClusteringResult::from_assignment(&pts, assignment, Diagnostics::new(Algorithm::Given)))
}

fn averaged(loss: &LossSpec, local: Vec<LocalModel>, assignment: &[usize], comm_rounds: usize) -> Result<ProtocolOutput> {
    let clustering = given_clustering(&local, assignment)?;
    let params: Vec<Vector> = local.iter().map(|m| m.params.clone()).collect();
    let centers = average_by(&params, &clustering.assignment, clustering.k_prime());
    Ok(ProtocolOutput {
        per_user_models: broadcast(&centers, &clustering.assignment),
        server_clustering: clustering,
        local_models: local,
        comm_rounds,
        has_intercept: loss.has_intercept,
        classification: loss.is_classification(),
        eps_hat: None,
    })
}

/// Exact local ERMs averaged within the true clusters.
pub fn baseline_oracle_avg(data: &FederatedDataset, loss: &LossSpec) -> Result<ProtocolOutput> {
    baseline_oracle_avg_from(data, loss, solve_local(data, loss, &ErmMode::Exact)?)
}

pub fn baseline_oracle_avg_from(data: &FederatedDataset, loss: &LossSpec, local: Vec<LocalModel>) -> Result<ProtocolOutput> {
    averaged(loss, local, &data.true_assignment, 1)
}

/// Every user keeps its own ERM.
pub fn baseline_local(data: &FederatedDataset, loss: &LossSpec) -> Result<ProtocolOutput> {
    baseline_local_from(loss, solve_local(data, loss, &ErmMode::Exact)?)
}

pub fn baseline_local_from(loss: &LossSpec, local: Vec<LocalModel>) -> Result<ProtocolOutput> {
    let singletons: Vec<usize> = (0..local.len()).collect();
    averaged(loss, local, &singletons, 0)
}

/// Grand mean of all local ERMs.
pub fn baseline_naive(data: &FederatedDataset, loss: &LossSpec) -> Result<ProtocolOutput> {
    baseline_naive_from(loss, solve_local(data, loss, &ErmMode::Exact)?)
}

pub fn baseline_naive_from(loss: &LossSpec, local: Vec<LocalModel>) -> Result<ProtocolOutput> {
    let one = vec![0; local.len()];
    averaged(loss, local, &one, 1)
}

/// ERM on the pooled data of each true cluster.
pub fn baseline_cluster_oracle(data: &FederatedDataset, loss: &LossSpec) -> Result<ProtocolOutput> {
    let clusters = data.true_clusters();
    let pooled: Vec<LocalModel> = clusters
        .par_iter()
        .enumerate()
        .map(|(k, users)| {
            let n: usize = users.iter().map(|&u| data.shards[u].len()).sum();
            let d = data.feature_dim;
            let mut features = Matrix::zeros(n, d);
            let mut labels = Vector::zeros(n);
            let mut row = 0;
            for &u in users {
                let s = &data.shards[u];
                features.rows_mut(row, s.len()).copy_from(&s.features);
                labels.rows_mut(row, s.len()).copy_from(&s.labels);
                row += s.len();
            }
            solve_erm_exact(loss, &UserShard { user_id: k, cluster_id: k, features, labels })
        })
        .collect::<Result<_>>()?;
    let centers: Vec<Vector> = pooled.iter().map(|m| m.params.clone()).collect();
    let per_user_models = broadcast(&centers, &data.true_assignment);
    let rows = per_user_models.clone();
    let pts = PointSet::from_rows(&rows)?;
    let clustering = ClusteringResult::from_assignment(&pts, &data.true_assignment, Diagnostics::new(Algorithm::Given));
    Ok(ProtocolOutput {
        per_user_models,
        server_clustering: clustering,
        local_models: Vec::new(),
        comm_rounds: 0,
        has_intercept: loss.has_intercept,
        classification: loss.is_classification(),
        eps_hat: None,
    })
}
