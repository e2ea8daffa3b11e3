//! Hyperparameter selection: the λ-path for convex clustering and the
//! number of clusters for K-means.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::conditions::recovery_interval;
use super::convex::{convex_cluster_with, distinct_groups, AdmmOptions};
use super::kmeans::{kmeans_pp, DEFAULT_RESTARTS};
use super::{members, ClusteringResult, PointSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterpathConfig {
    /// Number of equidistant λ values `N`.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Starting value of both bracketing endpoints.
    #[serde(default = "default_start")]
    pub start: f64,
    /// Multiplicative step used while bracketing.
    #[serde(default = "default_factor")]
    pub factor: f64,
    /// Cap on bracketing steps in each direction.
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_grid() -> usize {
    10
}
fn default_start() -> f64 {
    0.1
}
fn default_factor() -> f64 {
    1.25
}
fn default_max_steps() -> usize {
    200
}
fn default_tol() -> f64 {
    super::convex::DEFAULT_TOL
}

impl Default for ClusterpathConfig {
    fn default() -> Self {
        ClusterpathConfig {
            grid: default_grid(),
            start: default_start(),
            factor: default_factor(),
            max_steps: default_max_steps(),
            tol: default_tol(),
        }
    }
}

impl ClusterpathConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 2 {
            return Err(Error::config("grid", "need at least two λ values"));
        }
        if !(self.start > 0.0) {
            return Err(Error::config("start", "must be positive"));
        }
        if !(self.factor > 1.0) {
            return Err(Error::config("factor", "must exceed 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("tol", "must be positive"));
        }
        Ok(())
    }
}

/// One evaluated grid point of the λ-path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub k: usize,
    pub objective: f64,
    /// Whether the produced partition satisfies the a-posteriori recovery
    /// condition at this λ.
    pub verified: bool,
}

fn cluster_at(pts: &PointSet, lambda: f64, tol: f64) -> Result<ClusteringResult> {
    convex_cluster_with(pts, lambda, AdmmOptions { tol, ..AdmmOptions::default() })
}

/// Verification treats a single cluster as unverified: the recovery range has
/// no upper end there.
fn verified(pts: &PointSet, r: &ClusteringResult, lambda: f64) -> Result<bool> {
    if r.k_prime() < 2 {
        return Ok(false);
    }
    let (lo, hi) = recovery_interval(pts, &r.assignment)?;
    Ok(lo <= lambda && lambda < hi)
}

/// Clusterpath selection of λ.
///
/// Both endpoints start at `start`; the upper one grows by `factor` until a
/// single cluster remains and the lower one shrinks until every distinct
/// point is its own cluster. `grid` equidistant values in between are clustered, each
/// partition is checked against the recovery condition, and the chosen point
/// carries the most frequent cluster count over the whole grid, restricted to
/// verified points when there are any. Ties go to the larger λ.
pub fn clusterpath_select(pts: &PointSet, cfg: &ClusterpathConfig) -> Result<(f64, ClusteringResult, Vec<PathPoint>)> {
    cfg.validate()?;
    let finest = distinct_groups(pts, AdmmOptions::default().fusion);
    let mut hi = cfg.start;
    let mut steps = 0;
    while cluster_at(pts, hi, cfg.tol)?.k_prime() > 1 {
        steps += 1;
        if steps > cfg.max_steps {
            return Err(Error::arg("could not bracket a single-cluster λ"));
        }
        hi *= cfg.factor;
    }
    let mut lo = cfg.start;
    steps = 0;
    while cluster_at(pts, lo, cfg.tol)?.k_prime() < finest {
        steps += 1;
        if steps > cfg.max_steps {
            return Err(Error::arg("could not bracket an all-singleton λ"));
        }
        lo /= cfg.factor;
    }
    let n = cfg.grid;
    let lambdas: Vec<f64> = (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect();
    let runs: Vec<Option<(ClusteringResult, bool)>> = lambdas
        .par_iter()
        .map(|&lambda| match cluster_at(pts, lambda, cfg.tol) {
            Ok(r) => {
                let ok = verified(pts, &r, lambda).unwrap_or(false);
                Some((r, ok))
            }
            Err(e) => {
                warn!("clusterpath: skipping λ = {lambda}: {e}");
                None
            }
        })
        .collect();

    let mut trace = Vec::new();
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for (lambda, run) in lambdas.iter().zip(&runs) {
        if let Some((r, ok)) = run {
            *freq.entry(r.k_prime()).or_default() += 1;
            trace.push(PathPoint { lambda: *lambda, k: r.k_prime(), objective: r.diagnostics.objective, verified: *ok });
        }
    }
    if trace.is_empty() {
        return Err(Error::arg("convex clustering failed at every grid point"));
    }
    let any_verified = runs.iter().flatten().any(|(_, ok)| *ok);
    let mut best: Option<(usize, f64, usize)> = None;
    for (idx, run) in runs.iter().enumerate() {
        let Some((r, ok)) = run else { continue };
        if any_verified && !ok {
            continue;
        }
        let key = (freq[&r.k_prime()], lambdas[idx]);
        if best.is_none_or(|(f, l, _)| (key.0, key.1) >= (f, l)) {
            best = Some((key.0, key.1, idx));
        }
    }
    let (_, lambda, idx) = best.expect("at least one successful run");
    let (result, _) = runs[idx].clone().expect("selected run succeeded");
    Ok((lambda, result, trace))
}

/// λ-path trace as CSV: `lambda,k,objective,verified`.
pub fn write_path_csv<W: Write>(trace: &[PathPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in trace {
        w.serialize(p).map_err(|e| Error::arg(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::arg(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMetric {
    /// First `K` whose gain from one more cluster is below
    /// `threshold * (cost(1) - cost(2))`.
    Elbow { threshold: f64 },
    Silhouette,
}

/// Mean silhouette over points; points in singleton clusters score 0.
pub fn silhouette_score(pts: &PointSet, assignment: &[usize]) -> f64 {
    let m = pts.len();
    let k = assignment.iter().max().map_or(0, |&x| x + 1);
    if k < 2 {
        return 0.0;
    }
    let groups = members(assignment, k);
    let rows = pts.rows();
    let mut total = 0.0;
    for i in 0..m {
        let own = assignment[i];
        if groups[own].len() <= 1 {
            continue;
        }
        let mean_to = |c: usize| -> f64 {
            let g = &groups[c];
            let s: f64 = g.iter().filter(|&&j| j != i).map(|&j| (&rows[i] - &rows[j]).norm()).sum();
            let count = if c == own { g.len() - 1 } else { g.len() };
            s / count as f64
        };
        let a = mean_to(own);
        let b = (0..k).filter(|&c| c != own && !groups[c].is_empty()).map(mean_to).fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / m as f64
}

/// Estimate the number of clusters with K-means++ runs for `K = 1..=k_max`.
pub fn estimate_k(pts: &PointSet, k_max: usize, metric: KMetric, seed: u64) -> Result<usize> {
    let m = pts.len();
    if k_max == 0 || k_max > m {
        return Err(Error::arg(format!("need 1 <= k_max <= m = {m}, got {k_max}")));
    }
    match metric {
        KMetric::Elbow { threshold } => {
            if !(threshold >= 0.0) {
                return Err(Error::config("threshold", "must be nonnegative"));
            }
            let costs: Vec<f64> = (1..=k_max)
                .map(|k| kmeans_pp(pts, k, DEFAULT_RESTARTS, seed).map(|r| r.diagnostics.objective))
                .collect::<Result<_>>()?;
            if k_max == 1 {
                return Ok(1);
            }
            let first_drop = costs[0] - costs[1];
            if !(first_drop > 0.0) {
                return Ok(1);
            }
            for k in 1..k_max {
                if costs[k - 1] - costs[k] < threshold * first_drop {
                    return Ok(k);
                }
            }
            Ok(k_max)
        }
        KMetric::Silhouette => {
            if k_max < 2 {
                return Err(Error::arg("silhouette needs k_max >= 2"));
            }
            let mut best = (2, f64::NEG_INFINITY);
            for k in 2..=k_max {
                let r = kmeans_pp(pts, k, DEFAULT_RESTARTS, seed)?;
                let s = silhouette_score(pts, &r.assignment);
                if s > best.1 {
                    best = (k, s);
                }
            }
            Ok(best.0)
        }
    }
}
