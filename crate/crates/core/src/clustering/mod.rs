//! Server-side clustering of local models.

mod conditions;
mod convex;
mod kmeans;
mod select;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::{Matrix, Vector};
use crate::{Error, Result};

pub use conditions::{
    center_separation_holds, check_separability, lambda_interval, proximity_holds, recovery_interval,
    CenterSeparationReport, ProximityReport, SeparabilityReport,
};
pub use convex::{convex_cluster, convex_cluster_with, convex_objective, AdmmOptions, DEFAULT_TOL};
pub use kmeans::{
    kmeans_objective, kmeans_pp, kmeanspp_indices, kmeanspp_init, lloyd, spectral_kmeans, spectral_kmeans_part1, spectral_projection,
    DEFAULT_LLOYD_ITERS, DEFAULT_RESTARTS, SPECTRAL_RESTARTS,
};
pub use select::{
    clusterpath_select, estimate_k, silhouette_score, write_path_csv, ClusterpathConfig, KMetric, PathPoint,
};

/// Local models as rows of an `m x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub points: Matrix,
    pub ids: Vec<usize>,
}

impl PointSet {
    pub fn new(points: Matrix, ids: Vec<usize>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::NoData);
        }
        if ids.len() != points.nrows() {
            return Err(Error::DimensionMismatch { expected: points.nrows(), got: ids.len() });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("points"));
        }
        Ok(PointSet { points, ids })
    }

    /// Points numbered `0..m`.
    pub fn from_rows(rows: &[Vector]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::NoData);
        }
        let d = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
        }
        let points = Matrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(points, (0..rows.len()).collect())
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn row(&self, i: usize) -> Vector {
        self.points.row(i).transpose()
    }

    pub fn rows(&self) -> Vec<Vector> {
        (0..self.len()).map(|i| self.row(i)).collect()
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        let rows = self.rows();
        let mut best: f64 = 0.0;
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                best = best.max((&rows[i] - &rows[j]).norm());
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    ConvexClustering,
    Lloyd,
    KmeansPP,
    SpectralKmeans,
    SpectralPartOne,
    Given,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub objective: f64,
    pub lambda: Option<f64>,
    pub converged: bool,
    /// Named slacks of whatever recovery condition the algorithm checked.
    pub condition_margins: BTreeMap<String, f64>,
    /// Objective after each iteration, when the algorithm tracks it.
    pub objective_trace: Vec<f64>,
}

impl Diagnostics {
    pub fn new(algorithm: Algorithm) -> Self {
        Diagnostics {
            algorithm,
            iterations: 0,
            objective: 0.0,
            lambda: None,
            converged: true,
            condition_margins: BTreeMap::new(),
            objective_trace: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    /// Cluster index in `0..k_prime` for each point.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vector>,
    pub diagnostics: Diagnostics,
}

impl ClusteringResult {
    /// Builds a result whose centroids are the means of the original points.
    /// Labels are renumbered by first appearance and empty labels removed.
    pub fn from_assignment(pts: &PointSet, assignment: &[usize], diagnostics: Diagnostics) -> Self {
        let assignment = canonical_labels(assignment);
        let centroids = cluster_means(pts, &assignment);
        ClusteringResult { assignment, centroids, diagnostics }
    }

    pub fn k_prime(&self) -> usize {
        self.centroids.len()
    }

    pub fn clusters(&self) -> Vec<Vec<usize>> {
        members(&self.assignment, self.k_prime())
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Export<'a> {
            k_prime: usize,
            assignment: &'a [usize],
            centroids: Vec<Vec<f64>>,
            diagnostics: &'a Diagnostics,
        }
        let export = Export {
            k_prime: self.k_prime(),
            assignment: &self.assignment,
            centroids: self.centroids.iter().map(|c| c.iter().cloned().collect()).collect(),
            diagnostics: &self.diagnostics,
        };
        serde_json::to_string_pretty(&export).map_err(|e| Error::arg(e.to_string()))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| Error::Io { path: path.display().to_string(), reason: e.to_string() })
    }
}

/// Relabel so that clusters are numbered by first appearance.
pub fn canonical_labels(assignment: &[usize]) -> Vec<usize> {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    assignment
        .iter()
        .map(|&a| {
            let next = map.len();
            *map.entry(a).or_insert(next)
        })
        .collect()
}

pub(crate) fn members(assignment: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); k];
    for (i, &a) in assignment.iter().enumerate() {
        out[a].push(i);
    }
    out
}

/// Number of labels, requiring every label in `0..k` to be used.
pub(crate) fn label_count(truth: &[usize], m: usize) -> Result<usize> {
    if truth.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: truth.len() });
    }
    let k = truth.iter().max().map_or(0, |&x| x + 1);
    let mut used = vec![false; k];
    for &t in truth {
        used[t] = true;
    }
    if let Some(empty) = used.iter().position(|u| !u) {
        return Err(Error::EmptyCluster(empty));
    }
    Ok(k)
}

/// Per-label means of the rows of `pts`; labels must be `0..k` with none empty.
pub(crate) fn cluster_means(pts: &PointSet, assignment: &[usize]) -> Vec<Vector> {
    let k = assignment.iter().max().map_or(0, |&x| x + 1);
    let mut sums = vec![Vector::zeros(pts.dim()); k];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignment.iter().enumerate() {
        sums[a] += pts.points.row(i).transpose();
        counts[a] += 1;
    }
    sums.into_iter().zip(counts).map(|(s, c)| s / c as f64).collect()
}
