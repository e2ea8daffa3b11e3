use serde::{Deserialize, Serialize};

use super::{cluster_means, label_count, members, PointSet};
use crate::linalg::{spectral_norm, Matrix, Vector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub max_radius: f64,
    /// `+inf` for a single cluster.
    pub min_center_gap: f64,
    pub alpha_required: f64,
    pub holds: bool,
}

struct Geometry {
    means: Vec<Vector>,
    sizes: Vec<usize>,
    max_radius: f64,
    min_gap: f64,
}

fn geometry(pts: &PointSet, truth: &[usize]) -> Result<Geometry> {
    let k = label_count(truth, pts.len())?;
    let means = cluster_means(pts, truth);
    let sizes: Vec<usize> = members(truth, k).iter().map(|c| c.len()).collect();
    let max_radius = (0..pts.len())
        .map(|i| (pts.points.row(i).transpose() - &means[truth[i]]).norm())
        .fold(0.0, f64::max);
    let mut min_gap = f64::INFINITY;
    for a in 0..k {
        for b in a + 1..k {
            min_gap = min_gap.min((&means[a] - &means[b]).norm());
        }
    }
    Ok(Geometry { means, sizes, max_radius, min_gap })
}

/// Checks `alpha * max_radius < min_center_gap` for the partition `truth`.
pub fn check_separability(pts: &PointSet, truth: &[usize], alpha: f64) -> Result<SeparabilityReport> {
    if !(alpha > 1.0) {
        return Err(Error::arg(format!("alpha must exceed 1, got {alpha}")));
    }
    let g = geometry(pts, truth)?;
    Ok(SeparabilityReport {
        max_radius: g.max_radius,
        min_center_gap: g.min_gap,
        alpha_required: alpha,
        holds: alpha * g.max_radius < g.min_gap,
    })
}

/// Sufficient λ-range from the separability margin:
/// `[max_radius / s, min_gap / (2 (m - s)))` where `s` is the smallest
/// cluster size. May be empty (`lo >= hi`).
pub fn lambda_interval(pts: &PointSet, truth: &[usize]) -> Result<(f64, f64)> {
    let g = geometry(pts, truth)?;
    if g.sizes.len() < 2 {
        return Err(Error::arg("the λ-interval needs at least two clusters"));
    }
    let m = pts.len() as f64;
    let s = *g.sizes.iter().min().expect("k >= 2") as f64;
    Ok((g.max_radius / s, g.min_gap / (2.0 * (m - s))))
}

/// The a-posteriori exact-recovery range for a partition:
/// `max_k diam_k / |V_k| <= λ < min_{k != l} ||μ_k - μ_l|| / (2m - |V_k| - |V_l|)`.
/// The upper end is `+inf` for a single cluster.
pub fn recovery_interval(pts: &PointSet, partition: &[usize]) -> Result<(f64, f64)> {
    let g = geometry(pts, partition)?;
    let k = g.sizes.len();
    let groups = members(partition, k);
    let mut lo: f64 = 0.0;
    for c in &groups {
        let mut diam: f64 = 0.0;
        for (x, &i) in c.iter().enumerate() {
            for &j in &c[x + 1..] {
                diam = diam.max((pts.points.row(i) - pts.points.row(j)).norm());
            }
        }
        lo = lo.max(diam / c.len() as f64);
    }
    let m = pts.len();
    let mut hi = f64::INFINITY;
    for a in 0..k {
        for b in a + 1..k {
            let denom = (2 * m - g.sizes[a] - g.sizes[b]) as f64;
            hi = hi.min((&g.means[a] - &g.means[b]).norm() / denom);
        }
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterSeparationReport {
    pub holds: bool,
    /// `Δ_k` per cluster.
    pub deltas: Vec<f64>,
    pub spectral_norm: f64,
    pub frobenius_norm: f64,
    /// `min_{k<l} ||μ_k - μ_l|| - c (Δ_k + Δ_l)`.
    pub min_margin: f64,
    /// Largest `c` for which the condition holds (`+inf` when every Δ is 0).
    pub max_c: f64,
}

/// Centering residual `A - C`, where row `i` of `C` is the mean of `i`'s cluster.
fn residual(pts: &PointSet, truth: &[usize], means: &[Vector]) -> Matrix {
    Matrix::from_fn(pts.len(), pts.dim(), |i, j| pts.points[(i, j)] - means[truth[i]][j])
}

/// Center separation: `||μ_k - μ_l|| >= c (Δ_k + Δ_l)` for all pairs, with
/// `Δ_k = min(√K ||A - C||_2, ||A - C||_F) / √|C_k|`.
pub fn center_separation_holds(pts: &PointSet, truth: &[usize], c: f64) -> Result<CenterSeparationReport> {
    if !(c > 0.0) {
        return Err(Error::arg(format!("c must be positive, got {c}")));
    }
    let g = geometry(pts, truth)?;
    let k = g.sizes.len();
    let r = residual(pts, truth, &g.means);
    let spec = spectral_norm(&r);
    let frob = r.norm();
    let base = ((k as f64).sqrt() * spec).min(frob);
    let deltas: Vec<f64> = g.sizes.iter().map(|&s| base / (s as f64).sqrt()).collect();
    let mut min_margin = f64::INFINITY;
    let mut max_c = f64::INFINITY;
    for a in 0..k {
        for b in a + 1..k {
            let gap = (&g.means[a] - &g.means[b]).norm();
            let ds = deltas[a] + deltas[b];
            min_margin = min_margin.min(gap - c * ds);
            if ds > 0.0 {
                max_c = max_c.min(gap / ds);
            }
        }
    }
    Ok(CenterSeparationReport {
        holds: min_margin >= 0.0,
        deltas,
        spectral_norm: spec,
        frobenius_norm: frob,
        min_margin,
        max_c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProximityReport {
    pub holds: bool,
    /// Smallest slack over all points and cluster pairs.
    pub min_margin: f64,
}

/// Proximity: for `i` in `C_k` and `l != k`, the projection `P` of `a_i` onto
/// the line through `μ_k, μ_l` satisfies
/// `||P - μ_l|| - ||P - μ_k|| >= c (1/√|C_k| + 1/√|C_l|) ||A - C||_2`.
pub fn proximity_holds(pts: &PointSet, truth: &[usize], c: f64) -> Result<ProximityReport> {
    let g = geometry(pts, truth)?;
    let k = g.sizes.len();
    let spec = spectral_norm(&residual(pts, truth, &g.means));
    let mut min_margin = f64::INFINITY;
    for i in 0..pts.len() {
        let a = pts.row(i);
        let kk = truth[i];
        for l in (0..k).filter(|&l| l != kk) {
            let dir = &g.means[l] - &g.means[kk];
            let len2 = dir.norm_squared();
            let gamma = if len2 > 0.0 { (&a - &g.means[kk]).dot(&dir) / len2 } else { 0.0 };
            let p = &g.means[kk] + &dir * gamma;
            let lhs = (&p - &g.means[l]).norm() - (&p - &g.means[kk]).norm();
            let rhs = c * (1.0 / (g.sizes[kk] as f64).sqrt() + 1.0 / (g.sizes[l] as f64).sqrt()) * spec;
            min_margin = min_margin.min(lhs - rhs);
        }
    }
    Ok(ProximityReport { holds: min_margin >= 0.0, min_margin })
}
