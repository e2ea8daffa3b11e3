//! Federations of simulated users: shard types, synthetic generators, table
//! ingestion and the label-flip sharding used for classification runs.

mod export;
mod synthetic;
mod table;

pub use export::{export_dataset, import_dataset, Manifest};
pub use synthetic::{
    gen_linear_clusters, gen_logistic_clusters, gen_two_class_pool, logistic_reference_design,
    GenConfig, LogisticDesign, ModelLaw, TwoClassPool, SIGMA_3_SUBSTITUTE, SIGMA_3_TABULATED,
};
pub use table::{ingest_labeled_table, shard_label_flip, LabeledExample, TableSchema};

use crate::linalg::{Matrix, Vector};
use crate::{Error, Result};

/// One user's labeled data. `cluster_id` is ground truth and is never read by
/// the protocol itself.
#[derive(Debug, Clone, PartialEq)]
pub struct UserShard {
    pub user_id: usize,
    pub cluster_id: usize,
    /// `n x d`, one sample per row.
    pub features: Matrix,
    pub labels: Vector,
}

impl UserShard {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Held-out examples for one cluster, labeled the way that cluster labels them.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Vector,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset {
    pub shards: Vec<UserShard>,
    /// `true_assignment[i]` is the cluster of user `i`, in `0..k`.
    pub true_assignment: Vec<usize>,
    pub k: usize,
    pub feature_dim: usize,
    /// Population optimal weights per cluster (synthetic data only).
    pub true_models: Option<Vec<Vector>>,
    /// Population optimal intercepts per cluster, when the law has one.
    pub true_intercepts: Option<Vec<f64>>,
    /// One held-out set per cluster.
    pub test_sets: Option<Vec<LabeledSet>>,
    pub seed: Option<u64>,
}

impl FederatedDataset {
    pub fn num_users(&self) -> usize {
        self.shards.len()
    }

    /// Users of each true cluster, in increasing user index.
    pub fn true_clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.true_assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// Smallest pairwise distance between distinct true models (`D` in the
    /// recovery analysis). `None` without true models or with `k < 2`.
    pub fn min_model_gap(&self) -> Option<f64> {
        let models = self.true_models.as_ref()?;
        let mut best: Option<f64> = None;
        for a in 0..models.len() {
            for b in (a + 1)..models.len() {
                let g = (&models[a] - &models[b]).norm();
                best = Some(best.map_or(g, |x: f64| x.min(g)));
            }
        }
        best
    }

    /// Check the structural invariants. Generators call this before returning.
    pub fn validate(&self) -> Result<()> {
        let m = self.shards.len();
        if m == 0 {
            return Err(Error::config("shards", "no users"));
        }
        if self.true_assignment.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: self.true_assignment.len(),
            });
        }
        let mut sizes = vec![0usize; self.k];
        for &c in &self.true_assignment {
            if c >= self.k {
                return Err(Error::config("true_assignment", format!("cluster {c} >= k")));
            }
            sizes[c] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyCluster(empty));
        }
        for (i, shard) in self.shards.iter().enumerate() {
            if shard.dim() != self.feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.feature_dim,
                    got: shard.dim(),
                });
            }
            if shard.is_empty() {
                return Err(Error::config("shards", format!("user {i} has no samples")));
            }
            if shard.labels.len() != shard.len() {
                return Err(Error::DimensionMismatch {
                    expected: shard.len(),
                    got: shard.labels.len(),
                });
            }
        }
        if let Some(models) = &self.true_models {
            if models.len() != self.k {
                return Err(Error::DimensionMismatch {
                    expected: self.k,
                    got: models.len(),
                });
            }
            if let Some(gap) = self.min_model_gap() {
                if gap <= 0.0 {
                    return Err(Error::config("true_models", "two clusters share a model (D = 0)"));
                }
            }
        }
        Ok(())
    }
}
