//! Convex clustering, `min_U ½ Σ ||a_i - u_i||² + λ Σ_{i<j} ||u_i - u_j||`,
//! over the complete graph with unit weights, solved by ADMM on the split
//! `v_ij = u_i - u_j`.
//!
//! With `D` the pair-difference operator, `DᵀD = m I - 11ᵀ`, so the `U`-step
//! has the closed form `u_i = (b_i + ν Σ_j b_j) / (1 + ν m)`.

use super::{canonical_labels, conditions::recovery_interval, Algorithm, ClusteringResult, Diagnostics, PointSet};
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOptions {
    /// Relative primal/dual residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Points whose solutions lie within `fusion * diameter` are merged.
    pub fusion: f64,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        AdmmOptions { tol: DEFAULT_TOL, max_iter: 200_000, fusion: 1e-4 }
    }
}

/// Convex clustering with the default iteration cap and fusion threshold.
pub fn convex_cluster(pts: &PointSet, lambda: f64, tol: f64) -> Result<ClusteringResult> {
    convex_cluster_with(pts, lambda, AdmmOptions { tol, ..AdmmOptions::default() })
}

struct Pairs {
    list: Vec<(usize, usize)>,
}

impl Pairs {
    fn new(m: usize) -> Self {
        let mut list = Vec::with_capacity(m * m.saturating_sub(1) / 2);
        for i in 0..m {
            for j in i + 1..m {
                list.push((i, j));
            }
        }
        Pairs { list }
    }

    /// `out = Dᵀ x` for pair-indexed rows `x`.
    fn adjoint(&self, x: &[f64], d: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (l, &(i, j)) in self.list.iter().enumerate() {
            let src = &x[l * d..(l + 1) * d];
            for c in 0..d {
                out[i * d + c] += src[c];
                out[j * d + c] -= src[c];
            }
        }
    }

    /// `out = D u`.
    fn forward(&self, u: &[f64], d: usize, out: &mut [f64]) {
        for (l, &(i, j)) in self.list.iter().enumerate() {
            for c in 0..d {
                out[l * d + c] = u[i * d + c] - u[j * d + c];
            }
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Objective of the convex clustering program at row-major `u`.
pub fn convex_objective(pts: &PointSet, lambda: f64, u: &crate::linalg::Matrix) -> f64 {
    let m = pts.len();
    let fit = 0.5 * (&pts.points - u).norm_squared();
    let mut pen = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            pen += (u.row(i) - u.row(j)).norm();
        }
    }
    fit + lambda * pen
}

pub fn convex_cluster_with(pts: &PointSet, lambda: f64, opts: AdmmOptions) -> Result<ClusteringResult> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::arg(format!("lambda must be positive and finite, got {lambda}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::arg("tol must be positive"));
    }
    let m = pts.len();
    let d = pts.dim();
    let diameter = pts.diameter();
    let mut diag = Diagnostics::new(Algorithm::ConvexClustering);
    diag.lambda = Some(lambda);
    if m == 1 || diameter == 0.0 {
        let u = pts.points.clone();
        diag.objective = convex_objective(pts, lambda, &u);
        return Ok(ClusteringResult::from_assignment(pts, &vec![0; m], diag));
    }

    let a: Vec<f64> = (0..m).flat_map(|i| (0..d).map(move |c| (i, c))).map(|(i, c)| pts.points[(i, c)]).collect();
    let pairs = Pairs::new(m);
    let p = pairs.list.len();

    let mut u = a.clone();
    let mut v = vec![0.0; p * d];
    pairs.forward(&u, d, &mut v);
    let mut lam = vec![0.0; p * d];
    let mut du = vec![0.0; p * d];
    let mut rhs = vec![0.0; p * d];
    let mut b = vec![0.0; m * d];
    let mut v_old = vec![0.0; p * d];
    let mut dual_buf = vec![0.0; m * d];
    let mut nu = 1.0 / m as f64;
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iter {
        iterations = it;
        // U-step.
        for k in 0..p * d {
            rhs[k] = nu * v[k] - lam[k];
        }
        pairs.adjoint(&rhs, d, &mut b);
        let mut total = vec![0.0; d];
        for i in 0..m {
            for c in 0..d {
                b[i * d + c] += a[i * d + c];
                total[c] += b[i * d + c];
            }
        }
        let denom = 1.0 + nu * m as f64;
        for i in 0..m {
            for c in 0..d {
                u[i * d + c] = (b[i * d + c] + nu * total[c]) / denom;
            }
        }
        // V-step: group soft-threshold of Du + Λ/ν at λ/ν.
        pairs.forward(&u, d, &mut du);
        v_old.copy_from_slice(&v);
        let thresh = lambda / nu;
        for l in 0..p {
            let z: Vec<f64> = (0..d).map(|c| du[l * d + c] + lam[l * d + c] / nu).collect();
            let zn = norm(&z);
            let scale = if zn > thresh { 1.0 - thresh / zn } else { 0.0 };
            for c in 0..d {
                v[l * d + c] = scale * z[c];
            }
        }
        // Dual ascent.
        let mut r2 = 0.0;
        for k in 0..p * d {
            let r = du[k] - v[k];
            lam[k] += nu * r;
            r2 += r * r;
        }
        primal = r2.sqrt();
        for k in 0..p * d {
            rhs[k] = v[k] - v_old[k];
        }
        pairs.adjoint(&rhs, d, &mut dual_buf);
        dual = nu * norm(&dual_buf);

        let eps_pri = opts.tol * (1.0 + norm(&du).max(norm(&v)));
        pairs.adjoint(&lam, d, &mut dual_buf);
        let eps_dual = opts.tol * (1.0 + norm(&dual_buf));
        if primal <= eps_pri && dual <= eps_dual {
            converged = true;
            break;
        }
        // Residual balancing.
        if it % 10 == 0 {
            if primal > 10.0 * dual {
                nu *= 2.0;
            } else if dual > 10.0 * primal {
                nu /= 2.0;
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iterations, primal, dual });
    }

    let umat = crate::linalg::Matrix::from_row_slice(m, d, &u);
    let threshold = opts.fusion * diameter;
    let labels = fuse(&u, m, d, threshold);
    diag.iterations = iterations;
    diag.objective = convex_objective(pts, lambda, &umat);
    diag.converged = true;
    diag.condition_margins.insert("primal_residual".into(), primal);
    diag.condition_margins.insert("dual_residual".into(), dual);
    let mut result = ClusteringResult::from_assignment(pts, &labels, diag);
    if result.k_prime() >= 2 {
        let (lo, hi) = recovery_interval(pts, &result.assignment)?;
        let margins = &mut result.diagnostics.condition_margins;
        margins.insert("cond_lower".into(), lambda - lo);
        margins.insert("cond_upper".into(), hi - lambda);
    }
    Ok(result)
}

/// Number of groups the raw points form under the fusion rule, i.e. the
/// cluster count reached as λ goes to zero.
pub(crate) fn distinct_groups(pts: &PointSet, fusion: f64) -> usize {
    let m = pts.len();
    let d = pts.dim();
    let a: Vec<f64> = (0..m).flat_map(|i| (0..d).map(move |c| (i, c))).map(|(i, c)| pts.points[(i, c)]).collect();
    let labels = fuse(&a, m, d, fusion * pts.diameter());
    labels.iter().max().map_or(0, |&x| x + 1)
}

/// Union-find over pairs closer than `threshold`.
fn fuse(u: &[f64], m: usize, d: usize, threshold: f64) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..m {
        for j in i + 1..m {
            let dist2: f64 = (0..d).map(|c| (u[i * d + c] - u[j * d + c]).powi(2)).sum();
            if dist2.sqrt() <= threshold {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..m).map(|i| find(&mut parent, i)).collect();
    canonical_labels(&roots)
}
