use rand::Rng;
use rayon::prelude::*;

use super::{Algorithm, ClusteringResult, Diagnostics, PointSet};
use crate::linalg::{sq_dist, Matrix, Vector};
use crate::rng::{substream, Domain};
use crate::{Error, Result};

pub const DEFAULT_LLOYD_ITERS: usize = 300;
/// Restarts used by plain K-means++.
pub const DEFAULT_RESTARTS: usize = 10;
/// Restarts used for the approximation step of spectral K-means.
pub const SPECTRAL_RESTARTS: usize = 25;

/// Sum of squared distances from each point to its assigned center.
pub fn kmeans_objective(pts: &PointSet, assignment: &[usize], centers: &[Vector]) -> f64 {
    (0..pts.len()).map(|i| sq_dist(&pts.row(i), &centers[assignment[i]])).sum()
}

/// Nearest center, ties to the lowest index.
fn nearest(p: &Vector, centers: &[Vector]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Lloyd's algorithm from the given centers.
///
/// An empty cluster takes the point farthest from its current center; when
/// every point already sits on its center the empty cluster is dropped.
pub fn lloyd(pts: &PointSet, init_centers: &[Vector], max_iter: usize) -> Result<ClusteringResult> {
    if init_centers.is_empty() {
        return Err(Error::arg("lloyd needs at least one center"));
    }
    if let Some(c) = init_centers.iter().find(|c| c.len() != pts.dim()) {
        return Err(Error::DimensionMismatch { expected: pts.dim(), got: c.len() });
    }
    let rows = pts.rows();
    let k = init_centers.len();
    let mut centers = init_centers.to_vec();
    let mut assignment: Vec<usize> = rows.iter().map(|p| nearest(p, &centers)).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=max_iter.max(1) {
        iterations = it;
        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let far = (0..rows.len())
                .map(|i| (i, sq_dist(&rows[i], &centers[assignment[i]])))
                .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if far.1 > 0.0 {
                counts[assignment[far.0]] -= 1;
                assignment[far.0] = empty;
                counts[empty] = 1;
                centers[empty] = rows[far.0].clone();
            }
        }
        let mut sums = vec![Vector::zeros(pts.dim()); k];
        for (i, &a) in assignment.iter().enumerate() {
            sums[a] += &rows[i];
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = &sums[c] / counts[c] as f64;
            }
        }
        trace.push(kmeans_objective(pts, &assignment, &centers));
        let next: Vec<usize> = rows.iter().map(|p| nearest(p, &centers)).collect();
        if next == assignment {
            converged = true;
            break;
        }
        assignment = next;
    }
    let mut diag = Diagnostics::new(Algorithm::Lloyd);
    diag.iterations = iterations;
    diag.converged = converged;
    diag.objective = *trace.last().expect("at least one iteration");
    diag.objective_trace = trace;
    // Dropped clusters vanish here; the objective is unchanged because
    // centroids are the same means.
    Ok(ClusteringResult::from_assignment(pts, &assignment, diag))
}

/// K-means++ seeding: first center uniform, then `D²`-weighted. Returns
/// point indices so callers can check distinctness.
pub fn kmeanspp_indices(pts: &PointSet, k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let m = pts.len();
    if k == 0 || k > m {
        return Err(Error::arg(format!("need 1 <= K <= m = {m}, got K = {k}")));
    }
    let rows = pts.rows();
    let mut chosen = vec![rng.random_range(0..m)];
    let mut d2: Vec<f64> = rows.iter().map(|p| sq_dist(p, &rows[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    acc += w;
                    pick = Some(i);
                    if acc > target {
                        break;
                    }
                }
            }
            pick.expect("positive total")
        } else {
            // Every remaining point coincides with a center; pick uniformly
            // among unchosen indices.
            let free: Vec<usize> = (0..m).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in rows.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &rows[next]));
        }
        d2[next] = 0.0;
    }
    Ok(chosen)
}

/// K-means++ initial centers, deterministic in `seed`.
pub fn kmeanspp_init(pts: &PointSet, k: usize, seed: u64) -> Result<Vec<Vector>> {
    let mut rng = substream(seed, Domain::KmeansPP, 0);
    Ok(kmeanspp_indices(pts, k, &mut rng)?.into_iter().map(|i| pts.row(i)).collect())
}

/// Best of `restarts` K-means++ + Lloyd runs (lowest objective, ties to the
/// earliest restart).
fn best_of_restarts(pts: &PointSet, k: usize, restarts: usize, seed: u64) -> Result<ClusteringResult> {
    let runs: Vec<Result<ClusteringResult>> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, Domain::KmeansPP, r as u64);
            let init: Vec<Vector> = kmeanspp_indices(pts, k, &mut rng)?.into_iter().map(|i| pts.row(i)).collect();
            lloyd(pts, &init, DEFAULT_LLOYD_ITERS)
        })
        .collect();
    let mut best: Option<ClusteringResult> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.diagnostics.objective < b.diagnostics.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// K-means++ seeding followed by Lloyd, best of `restarts`.
pub fn kmeans_pp(pts: &PointSet, k: usize, restarts: usize, seed: u64) -> Result<ClusteringResult> {
    let mut r = best_of_restarts(pts, k, restarts, seed)?;
    r.diagnostics.algorithm = Algorithm::KmeansPP;
    Ok(r)
}

/// Rows of `A V_K V_Kᵀ` for the top-`k` right singular vectors of `A`.
pub fn spectral_projection(points: &Matrix, k: usize) -> Matrix {
    let d = points.ncols();
    if k >= d {
        return points.clone();
    }
    let svd = points.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let basis = Matrix::from_fn(d, k, |r, c| v_t[(order[c], r)]);
    points * &basis * basis.transpose()
}

struct PartOne {
    projected: PointSet,
    /// Centers in the projected space.
    nu: Vec<Vector>,
    result: ClusteringResult,
}

fn part_one(pts: &PointSet, k: usize, seed: u64) -> Result<PartOne> {
    let m = pts.len();
    if k == 0 || k > m {
        return Err(Error::arg(format!("need 1 <= K <= m = {m}, got K = {k}")));
    }
    let projected = PointSet::new(spectral_projection(&pts.points, k), pts.ids.clone())?;
    let approx = best_of_restarts(&projected, k, SPECTRAL_RESTARTS, seed)?;
    let nu = approx.centroids.clone();
    let mut diag = approx.diagnostics.clone();
    diag.algorithm = Algorithm::SpectralPartOne;
    let mut result = ClusteringResult::from_assignment(pts, &approx.assignment, diag);
    result.diagnostics.objective = kmeans_objective(pts, &result.assignment, &result.centroids);
    Ok(PartOne { projected, nu, result })
}

/// Part I of spectral K-means only: SVD projection then the K-means
/// approximation on the projected points. Centroids are means of the
/// original points.
pub fn spectral_kmeans_part1(pts: &PointSet, k: usize, seed: u64) -> Result<ClusteringResult> {
    Ok(part_one(pts, k, seed)?.result)
}

/// Spectral K-means: projection and approximation, core-point refinement,
/// then Lloyd on the original points.
pub fn spectral_kmeans(pts: &PointSet, k: usize, seed: u64) -> Result<ClusteringResult> {
    let PartOne { projected, nu, result } = part_one(pts, k, seed)?;
    let kk = nu.len();
    let rows = projected.rows();
    let originals = pts.rows();
    let mut centers = Vec::with_capacity(kk);
    for c in 0..kk {
        let core: Vec<usize> = (0..rows.len())
            .filter(|&i| {
                let own = (&rows[i] - &nu[c]).norm();
                (0..kk).filter(|&l| l != c).all(|l| 3.0 * own <= (&rows[i] - &nu[l]).norm())
            })
            .collect();
        centers.push(if core.is_empty() {
            result.centroids[c].clone()
        } else {
            core.iter().fold(Vector::zeros(pts.dim()), |acc, &i| acc + &originals[i]) / core.len() as f64
        });
    }
    let mut out = lloyd(pts, &centers, DEFAULT_LLOYD_ITERS)?;
    out.diagnostics.algorithm = Algorithm::SpectralKmeans;
    Ok(out)
}
