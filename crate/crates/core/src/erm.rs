//! Local empirical risk minimization.
//!
//! Parameters are stored as one vector: the `d` weights followed by the
//! intercept when the loss has one. The ridge penalty and the ball constraint
//! apply to the weights only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::UserShard;
use crate::linalg::{min_eigenvalue, psd_min_norm_solve, Matrix, Vector};
use crate::rng::{substream, Domain};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(y - <x, theta> - b)^2 / 2`
    Quadratic,
    /// `log(1 + exp(-y (<x, theta> + b)))`
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Ridge coefficient `C`; the objective adds `C ||theta||^2 / 2`.
    #[serde(default)]
    pub reg: f64,
    #[serde(default)]
    pub has_intercept: bool,
    /// Radius of the parameter ball.
    pub radius: f64,
}

impl LossSpec {
    pub fn quadratic(radius: f64) -> Self {
        LossSpec { kind: LossKind::Quadratic, reg: 0.0, has_intercept: false, radius }
    }

    pub fn logistic(reg: f64, radius: f64) -> Self {
        LossSpec { kind: LossKind::Logistic, reg, has_intercept: true, radius }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reg.is_finite() && self.reg >= 0.0) {
            return Err(Error::config("reg", "must be finite and nonnegative"));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::config("radius", "must be finite and positive"));
        }
        Ok(())
    }

    /// Length of the parameter vector for `d` features.
    pub fn param_dim(&self, d: usize) -> usize {
        d + usize::from(self.has_intercept)
    }

    pub fn is_classification(&self) -> bool {
        self.kind == LossKind::Logistic
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    ClosedForm,
    Newton,
    ProjectedSgd,
    GradientDescent,
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveMeta {
    pub iterations: usize,
    pub final_objective: f64,
    pub method: SolveMethod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    /// Weights, then the intercept if `has_intercept`.
    pub params: Vector,
    pub has_intercept: bool,
    pub user_id: usize,
    pub meta: SolveMeta,
}

impl LocalModel {
    pub fn new(params: Vector, has_intercept: bool, user_id: usize, meta: SolveMeta) -> Self {
        LocalModel { params, has_intercept, user_id, meta }
    }

    pub fn weights(&self) -> Vector {
        weights(&self.params, self.has_intercept)
    }

    pub fn intercept(&self) -> f64 {
        intercept(&self.params, self.has_intercept)
    }
}

fn weights(params: &Vector, has_intercept: bool) -> Vector {
    let d = params.len() - usize::from(has_intercept);
    params.rows(0, d).into_owned()
}

fn intercept(params: &Vector, has_intercept: bool) -> f64 {
    if has_intercept {
        params[params.len() - 1]
    } else {
        0.0
    }
}

/// Linear score `<x, w> + b` of one feature row.
pub(crate) fn score(params: &Vector, has_intercept: bool, features: &Matrix, row: usize) -> f64 {
    let d = features.ncols();
    let mut z = if has_intercept { params[d] } else { 0.0 };
    for j in 0..d {
        z += features[(row, j)] * params[j];
    }
    z
}

/// `log(1 + exp(-t))` without overflow.
fn softplus_neg(t: f64) -> f64 {
    if t > 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

/// `1 / (1 + exp(t))`
fn sigmoid_neg(t: f64) -> f64 {
    if t > 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

fn sample_loss(kind: LossKind, z: f64, y: f64) -> f64 {
    match kind {
        LossKind::Quadratic => 0.5 * (y - z) * (y - z),
        LossKind::Logistic => softplus_neg(y * z),
    }
}

/// Derivative of the per-sample loss with respect to the score.
fn sample_dloss(kind: LossKind, z: f64, y: f64) -> f64 {
    match kind {
        LossKind::Quadratic => z - y,
        LossKind::Logistic => -y * sigmoid_neg(y * z),
    }
}

fn check_dims(loss: &LossSpec, params: &Vector, features: &Matrix, labels: &Vector) -> Result<()> {
    let p = loss.param_dim(features.ncols());
    if params.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: params.len() });
    }
    if labels.len() != features.nrows() {
        return Err(Error::DimensionMismatch { expected: features.nrows(), got: labels.len() });
    }
    Ok(())
}

fn ridge(loss: &LossSpec, params: &Vector) -> f64 {
    let d = params.len() - usize::from(loss.has_intercept);
    0.5 * loss.reg * params.rows(0, d).norm_squared()
}

/// Mean per-sample loss plus the ridge term, on arbitrary rows.
pub fn objective(loss: &LossSpec, params: &Vector, features: &Matrix, labels: &Vector) -> Result<f64> {
    check_dims(loss, params, features, labels)?;
    let n = features.nrows();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let total: f64 = (0..n)
        .map(|r| sample_loss(loss.kind, score(params, loss.has_intercept, features, r), labels[r]))
        .sum();
    Ok(total / n as f64 + ridge(loss, params))
}

/// Local empirical loss of `model` on `shard`.
pub fn eval_loss(loss: &LossSpec, model: &LocalModel, shard: &UserShard) -> Result<f64> {
    objective(loss, &model.params, &shard.features, &shard.labels)
}

/// Gradient of the batch-mean loss (plus ridge) over the given rows of a
/// shard. Rows may repeat.
pub fn grad_rows(loss: &LossSpec, params: &Vector, features: &Matrix, labels: &Vector, rows: &[usize]) -> Result<Vector> {
    check_dims(loss, params, features, labels)?;
    if rows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let d = features.ncols();
    let mut g = Vector::zeros(params.len());
    for &r in rows {
        let z = score(params, loss.has_intercept, features, r);
        let s = sample_dloss(loss.kind, z, labels[r]);
        for j in 0..d {
            g[j] += s * features[(r, j)];
        }
        if loss.has_intercept {
            g[d] += s;
        }
    }
    g /= rows.len() as f64;
    for j in 0..d {
        g[j] += loss.reg * params[j];
    }
    Ok(g)
}

/// Gradient of the mean loss over every row of `features`.
pub fn grad(loss: &LossSpec, params: &Vector, features: &Matrix, labels: &Vector) -> Result<Vector> {
    let rows: Vec<usize> = (0..features.nrows()).collect();
    grad_rows(loss, params, features, labels, &rows)
}

/// Features with a trailing column of ones when the loss has an intercept.
fn design(loss: &LossSpec, features: &Matrix) -> Matrix {
    if loss.has_intercept {
        features.clone().insert_column(features.ncols(), 1.0)
    } else {
        features.clone()
    }
}

/// Ridge penalty matrix: identity on the weights, zero on the intercept.
fn penalty(loss: &LossSpec, p: usize) -> Matrix {
    let mut pen = Matrix::identity(p, p) * loss.reg;
    if loss.has_intercept {
        pen[(p - 1, p - 1)] = 0.0;
    }
    pen
}

/// Sufficient statistics of a quadratic shard: `X^T X / n`, `X^T y / n` and
/// `y^T y / n` (with the intercept column when present). Full-shard objective
/// and gradient then cost `O(p^2)` instead of `O(n p)`.
#[derive(Debug, Clone)]
pub struct QuadraticStats {
    pub gram: Matrix,
    pub xty: Vector,
    pub yty: f64,
    reg: f64,
    has_intercept: bool,
}

impl QuadraticStats {
    pub fn new(loss: &LossSpec, features: &Matrix, labels: &Vector) -> Self {
        let n = features.nrows().max(1) as f64;
        let x = design(loss, features);
        QuadraticStats {
            gram: x.tr_mul(&x) / n,
            xty: x.tr_mul(labels) / n,
            yty: labels.norm_squared() / n,
            reg: loss.reg,
            has_intercept: loss.has_intercept,
        }
    }

    fn ridge(&self, params: &Vector) -> f64 {
        let d = params.len() - usize::from(self.has_intercept);
        0.5 * self.reg * params.rows(0, d).norm_squared()
    }

    pub fn objective(&self, params: &Vector) -> f64 {
        0.5 * (self.yty - 2.0 * params.dot(&self.xty) + params.dot(&(&self.gram * params))) + self.ridge(params)
    }

    pub fn gradient(&self, params: &Vector) -> Vector {
        let mut g = &self.gram * params - &self.xty;
        let d = params.len() - usize::from(self.has_intercept);
        for j in 0..d {
            g[j] += self.reg * params[j];
        }
        g
    }
}

/// Strong-convexity modulus of the local objective used by the SGD step rule:
/// smallest eigenvalue of the regularized second-moment matrix for the
/// quadratic loss, the ridge coefficient for the logistic loss.
pub fn strong_convexity(loss: &LossSpec, shard: &UserShard) -> f64 {
    match loss.kind {
        LossKind::Quadratic => {
            let stats = QuadraticStats::new(loss, &shard.features, &shard.labels);
            let p = stats.gram.nrows();
            min_eigenvalue(&(stats.gram + penalty(loss, p))).max(0.0)
        }
        LossKind::Logistic => loss.reg,
    }
}

/// Euclidean projection onto the closed ball of radius `r`.
pub fn project_ball(v: &Vector, r: f64) -> Vector {
    let norm = v.norm();
    if norm <= r {
        v.clone()
    } else {
        v * (r / norm)
    }
}

/// Project only the weight block of `params` onto the ball.
pub(crate) fn project_weights(params: &mut Vector, has_intercept: bool, r: f64) {
    let d = params.len() - usize::from(has_intercept);
    let norm = params.rows(0, d).norm();
    if norm > r {
        let scale = r / norm;
        for j in 0..d {
            params[j] *= scale;
        }
    }
}

fn check_finite(shard: &UserShard) -> Result<()> {
    if shard.features.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("features"));
    }
    if shard.labels.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("labels"));
    }
    Ok(())
}

/// Exact local minimizer.
///
/// Quadratic: regularized normal equations, minimum-norm solution when they
/// are singular. Logistic: damped Newton from zero until the gradient norm
/// drops below `1e-10` (or stops improving). The weights are projected onto
/// the ball only if the minimizer lies outside it.
pub fn solve_erm_exact(loss: &LossSpec, shard: &UserShard) -> Result<LocalModel> {
    loss.validate()?;
    if shard.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_finite(shard)?;
    let (mut params, iterations, method) = match loss.kind {
        LossKind::Quadratic => {
            let stats = QuadraticStats::new(loss, &shard.features, &shard.labels);
            let p = stats.gram.nrows();
            let a = &stats.gram + penalty(loss, p);
            let params = match a.clone().cholesky() {
                // Cholesky of a numerically singular matrix can succeed with
                // garbage; require a sane pivot ratio before trusting it.
                Some(ch) if cholesky_well_conditioned(&ch.l()) => ch.solve(&stats.xty),
                _ => psd_min_norm_solve(&a, &stats.xty),
            };
            (params, 1, SolveMethod::ClosedForm)
        }
        LossKind::Logistic => {
            let (params, it) = newton_logistic(loss, &shard.features, &shard.labels);
            (params, it, SolveMethod::Newton)
        }
    };
    project_weights(&mut params, loss.has_intercept, loss.radius);
    let final_objective = objective(loss, &params, &shard.features, &shard.labels)?;
    Ok(LocalModel::new(
        params,
        loss.has_intercept,
        shard.user_id,
        SolveMeta { iterations, final_objective, method },
    ))
}

fn cholesky_well_conditioned(l: &Matrix) -> bool {
    let diag: Vec<f64> = l.diagonal().iter().cloned().collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    max > 0.0 && min > 1e-7 * max
}

const NEWTON_MAX_ITER: usize = 200;
const NEWTON_TOL: f64 = 1e-10;

fn newton_logistic(loss: &LossSpec, features: &Matrix, labels: &Vector) -> (Vector, usize) {
    let n = features.nrows();
    let x = design(loss, features);
    let p = x.ncols();
    let pen = penalty(loss, p);
    let mut params = Vector::zeros(p);
    let mut value = objective(loss, &params, features, labels).expect("dims checked");
    let mut iterations = 0;
    for it in 1..=NEWTON_MAX_ITER {
        iterations = it;
        let g = grad(loss, &params, features, labels).expect("dims checked");
        let gnorm = g.norm();
        if gnorm <= NEWTON_TOL {
            iterations = it - 1;
            break;
        }
        let z = &x * &params;
        let mut weighted = x.clone();
        for r in 0..n {
            let s = sigmoid_neg(z[r]) * sigmoid_neg(-z[r]);
            weighted.row_mut(r).scale_mut(s / n as f64);
        }
        let hessian = x.tr_mul(&weighted) + &pen;
        let mut dir = -match hessian.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => psd_min_norm_solve(&hessian, &g),
        };
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) || dir.iter().any(|v| !v.is_finite()) {
            dir = -g.clone();
            slope = -gnorm * gnorm;
        }
        // Armijo backtracking.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &params + &dir * step;
            let tv = objective(loss, &trial, features, labels).expect("dims checked");
            if tv <= value + 1e-4 * step * slope {
                params = trial;
                accepted = tv < value || step * dir.norm() <= f64::EPSILON * (1.0 + params.norm());
                value = tv;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (params, iterations)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    /// Number of SGD steps `T`.
    pub iterations: usize,
    /// Strong-convexity modulus for the `1 / (mu t)` step rule. `None` uses
    /// [`strong_convexity`] of each shard.
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations", "T must be at least 1"));
        }
        if let Some(mu) = self.mu {
            if !(mu.is_finite() && mu > 0.0) {
                return Err(Error::config("mu", "must be positive"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Projected SGD from zero with step `1 / (mu t)`, minibatches drawn
/// uniformly with replacement. Returns the last iterate.
pub fn solve_erm_sgd(loss: &LossSpec, shard: &UserShard, cfg: &SgdConfig) -> Result<LocalModel> {
    solve_erm_sgd_observed(loss, shard, cfg, |_, _| {})
}

/// [`solve_erm_sgd`] calling `observe(t, theta_t)` after every step.
pub fn solve_erm_sgd_observed<F>(loss: &LossSpec, shard: &UserShard, cfg: &SgdConfig, mut observe: F) -> Result<LocalModel>
where
    F: FnMut(usize, &Vector),
{
    loss.validate()?;
    cfg.validate()?;
    if shard.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_finite(shard)?;
    let mu = match cfg.mu {
        Some(mu) => mu,
        None => strong_convexity(loss, shard),
    };
    if !(mu > 0.0) {
        return Err(Error::config("mu", format!("shard {} is not strongly convex (mu = {mu})", shard.user_id)));
    }
    let n = shard.len();
    let mut rng = substream(cfg.seed, Domain::Sgd, shard.user_id as u64);
    let mut params = Vector::zeros(loss.param_dim(shard.dim()));
    let mut batch = vec![0usize; cfg.batch_size];
    for t in 1..=cfg.iterations {
        for b in batch.iter_mut() {
            *b = rng.random_range(0..n);
        }
        let g = grad_rows(loss, &params, &shard.features, &shard.labels, &batch)?;
        params.axpy(-1.0 / (mu * t as f64), &g, 1.0);
        project_weights(&mut params, loss.has_intercept, loss.radius);
        observe(t, &params);
    }
    let final_objective = objective(loss, &params, &shard.features, &shard.labels)?;
    Ok(LocalModel::new(
        params,
        loss.has_intercept,
        shard.user_id,
        SolveMeta { iterations: cfg.iterations, final_objective, method: SolveMethod::ProjectedSgd },
    ))
}

/// Per-iteration SGD trace as CSV (`t,objective,param_0,...`).
pub fn write_sgd_trace<W: std::io::Write>(
    loss: &LossSpec,
    shard: &UserShard,
    cfg: &SgdConfig,
    out: W,
) -> Result<LocalModel> {
    let mut w = csv::Writer::from_writer(out);
    let mut failure: Option<csv::Error> = None;
    let p = loss.param_dim(shard.dim());
    let mut header = vec!["t".to_string(), "objective".to_string()];
    header.extend((0..p).map(|j| format!("param_{j}")));
    w.write_record(&header).map_err(|e| Error::arg(e.to_string()))?;
    let model = solve_erm_sgd_observed(loss, shard, cfg, |t, theta| {
        if failure.is_some() {
            return;
        }
        let obj = objective(loss, theta, &shard.features, &shard.labels).unwrap_or(f64::NAN);
        let mut row = vec![t.to_string(), obj.to_string()];
        row.extend(theta.iter().map(|v| v.to_string()));
        if let Err(e) = w.write_record(&row) {
            failure = Some(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(Error::arg(e.to_string()));
    }
    w.flush().map_err(|e| Error::arg(e.to_string()))?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn shard(rows: &[&[f64]], labels: &[f64]) -> UserShard {
        let d = rows[0].len();
        UserShard {
            user_id: 0,
            cluster_id: 0,
            features: Matrix::from_fn(rows.len(), d, |i, j| rows[i][j]),
            labels: Vector::from_column_slice(labels),
        }
    }

    fn random_shard(n: usize, d: usize, seed: u64, logistic: bool) -> UserShard {
        let mut rng = substream(seed, Domain::Instance, 0);
        let features = Matrix::from_fn(n, d, |_, _| rng.sample(StandardNormal));
        let labels = Vector::from_fn(n, |_, _| {
            let v: f64 = rng.sample(StandardNormal);
            if logistic {
                if v > 0.0 { 1.0 } else { -1.0 }
            } else {
                v
            }
        });
        UserShard { user_id: 0, cluster_id: 0, features, labels }
    }

    fn model(params: &[f64], has_intercept: bool) -> LocalModel {
        LocalModel::new(
            Vector::from_column_slice(params),
            has_intercept,
            0,
            SolveMeta { iterations: 0, final_objective: 0.0, method: SolveMethod::ClosedForm },
        )
    }

    #[test]
    fn quadratic_loss_single_sample() {
        let s = shard(&[&[1.0]], &[3.0]);
        let loss = LossSpec::quadratic(10.0);
        assert_eq!(eval_loss(&loss, &model(&[1.0], false), &s).unwrap(), 2.0);
        let g = grad(&loss, &Vector::from_element(1, 1.0), &s.features, &s.labels).unwrap();
        assert_eq!(g[0], -2.0);
    }

    #[test]
    fn logistic_loss_at_zero_is_log_two() {
        let s = random_shard(17, 3, 1, true);
        let loss = LossSpec::logistic(0.0, 10.0);
        let v = eval_loss(&loss, &model(&[0.0; 4], true), &s).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn noiseless_fit_has_zero_loss() {
        let s = shard(&[&[1.0, 0.0], &[0.0, 2.0], &[1.0, 1.0]], &[2.0, -2.0, 1.0]);
        let loss = LossSpec::quadratic(10.0);
        assert!(eval_loss(&loss, &model(&[2.0, -1.0], false), &s).unwrap().abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = shard(&[&[1.0, 0.0]], &[1.0]);
        let loss = LossSpec::quadratic(10.0);
        assert!(matches!(
            eval_loss(&loss, &model(&[1.0], false), &s),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let s = shard(&[&[1.0]], &[1.0]);
        let loss = LossSpec::quadratic(10.0);
        assert!(matches!(
            grad_rows(&loss, &Vector::zeros(1), &s.features, &s.labels, &[]),
            Err(Error::EmptyBatch)
        ));
    }

    // Central-difference oracle, independent of the analytic gradient.
    fn fd_gradient(loss: &LossSpec, params: &Vector, s: &UserShard) -> Vector {
        let h = 1e-6;
        Vector::from_fn(params.len(), |j, _| {
            let mut up = params.clone();
            let mut dn = params.clone();
            up[j] += h;
            dn[j] -= h;
            (objective(loss, &up, &s.features, &s.labels).unwrap()
                - objective(loss, &dn, &s.features, &s.labels).unwrap())
                / (2.0 * h)
        })
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20u64 {
            for (logistic, has_intercept, reg) in [(false, false, 0.0), (false, true, 0.3), (true, true, 1e-2), (true, false, 0.0)] {
                let s = random_shard(25, 4, seed, logistic);
                let loss = LossSpec {
                    kind: if logistic { LossKind::Logistic } else { LossKind::Quadratic },
                    reg,
                    has_intercept,
                    radius: 100.0,
                };
                let mut rng = substream(seed, Domain::Instance, 1);
                let params = Vector::from_fn(loss.param_dim(4), |_, _| rng.sample::<f64, _>(StandardNormal));
                let g = grad(&loss, &params, &s.features, &s.labels).unwrap();
                let fd = fd_gradient(&loss, &params, &s);
                let rel = (&g - &fd).norm() / g.norm().max(1e-12);
                assert!(rel <= 1e-5, "seed {seed} logistic={logistic}: rel err {rel}");
            }
        }
    }

    #[test]
    fn exact_quadratic_recovers_line() {
        let s = shard(&[&[1.0], &[2.0], &[-3.0]], &[2.0, 4.0, -6.0]);
        let m = solve_erm_exact(&LossSpec::quadratic(10.0), &s).unwrap();
        assert!((m.params[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn exact_solution_is_first_order_optimal() {
        for seed in 0..10 {
            let s = random_shard(40, 6, seed, false);
            let mut loss = LossSpec::quadratic(1e6);
            loss.has_intercept = seed % 2 == 0;
            let m = solve_erm_exact(&loss, &s).unwrap();
            let g = grad(&loss, &m.params, &s.features, &s.labels).unwrap();
            assert!(g.norm() <= 1e-8 * (1.0 + m.params.norm()), "grad {}", g.norm());
        }
    }

    #[test]
    fn exact_logistic_is_first_order_optimal() {
        for seed in 0..10 {
            let s = random_shard(60, 3, seed, true);
            let loss = LossSpec::logistic(1e-2, 1e6);
            let m = solve_erm_exact(&loss, &s).unwrap();
            let g = grad(&loss, &m.params, &s.features, &s.labels).unwrap();
            assert!(g.norm() <= 1e-8, "grad {}", g.norm());
            assert_eq!(m.meta.method, SolveMethod::Newton);
        }
    }

    #[test]
    fn underdetermined_ridge_beats_zero() {
        let s = random_shard(3, 8, 4, false);
        let loss = LossSpec { reg: 1e-5, ..LossSpec::quadratic(1e6) };
        let m = solve_erm_exact(&loss, &s).unwrap();
        let at_zero = objective(&loss, &Vector::zeros(8), &s.features, &s.labels).unwrap();
        assert!(m.meta.final_objective <= at_zero);
        let g = grad(&loss, &m.params, &s.features, &s.labels).unwrap();
        assert!(g.norm() <= 1e-6, "grad {}", g.norm());
    }

    #[test]
    fn rank_deficient_without_ridge_gives_min_norm() {
        // Duplicate column: any split of the coefficient fits; min-norm splits evenly.
        let s = shard(&[&[1.0, 1.0], &[2.0, 2.0]], &[2.0, 4.0]);
        let m = solve_erm_exact(&LossSpec::quadratic(10.0), &s).unwrap();
        assert!((m.params[0] - 1.0).abs() < 1e-10 && (m.params[1] - 1.0).abs() < 1e-10, "{}", m.params);
    }

    #[test]
    fn non_finite_data_rejected() {
        let s = shard(&[&[f64::NAN]], &[1.0]);
        assert!(matches!(solve_erm_exact(&LossSpec::quadratic(1.0), &s), Err(Error::NonFinite(_))));
    }

    #[test]
    fn exact_solution_projected_when_outside_ball() {
        let s = shard(&[&[1.0]], &[5.0]);
        let m = solve_erm_exact(&LossSpec::quadratic(2.0), &s).unwrap();
        assert!((m.params[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn ball_projection() {
        let v = Vector::from_vec(vec![3.0, 4.0]);
        assert_eq!(project_ball(&v, 10.0), v);
        let p = project_ball(&v, 1.0);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_stays_in_ball() {
        let s = random_shard(30, 3, 2, false);
        let exact = solve_erm_exact(&LossSpec::quadratic(1e6), &s).unwrap();
        let radius = 0.5 * exact.params.norm();
        let loss = LossSpec::quadratic(radius);
        let cfg = SgdConfig { iterations: 500, mu: None, batch_size: 1, seed: 3 };
        let mut max_norm: f64 = 0.0;
        let out = solve_erm_sgd_observed(&loss, &s, &cfg, |_, th| max_norm = max_norm.max(th.norm())).unwrap();
        assert!(max_norm <= radius * (1.0 + 1e-12));
        assert!(out.params.norm() <= radius * (1.0 + 1e-12));
    }

    #[test]
    fn sgd_converges_to_exact_solution() {
        let s = random_shard(20, 2, 5, false);
        let loss = LossSpec::quadratic(50.0);
        let exact = solve_erm_exact(&loss, &s).unwrap();
        let cfg = SgdConfig { iterations: 200_000, mu: None, batch_size: 4, seed: 1 };
        let approx = solve_erm_sgd(&loss, &s, &cfg).unwrap();
        assert!((&approx.params - &exact.params).norm() <= 1e-2, "{}", (&approx.params - &exact.params).norm());
    }

    #[test]
    fn sgd_config_validation() {
        let s = random_shard(5, 2, 0, false);
        let loss = LossSpec::quadratic(10.0);
        let bad = SgdConfig { iterations: 0, mu: None, batch_size: 1, seed: 0 };
        assert!(solve_erm_sgd(&loss, &s, &bad).is_err());
        let bad = SgdConfig { iterations: 10, mu: Some(0.0), batch_size: 1, seed: 0 };
        assert!(solve_erm_sgd(&loss, &s, &bad).is_err());
    }

    #[test]
    fn quadratic_stats_agree_with_direct_evaluation() {
        let s = random_shard(30, 4, 8, false);
        let loss = LossSpec { reg: 0.2, has_intercept: true, ..LossSpec::quadratic(10.0) };
        let stats = QuadraticStats::new(&loss, &s.features, &s.labels);
        let theta = Vector::from_vec(vec![0.3, -1.0, 2.0, 0.5, 0.1]);
        let direct = objective(&loss, &theta, &s.features, &s.labels).unwrap();
        assert!((stats.objective(&theta) - direct).abs() < 1e-12);
        let g = grad(&loss, &theta, &s.features, &s.labels).unwrap();
        assert!((stats.gradient(&theta) - g).norm() < 1e-12);
    }

    #[test]
    fn trace_has_one_row_per_step() {
        let s = random_shard(10, 2, 0, false);
        let mut buf = Vec::new();
        let cfg = SgdConfig { iterations: 7, mu: None, batch_size: 1, seed: 0 };
        write_sgd_trace(&LossSpec::quadratic(10.0), &s, &cfg, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 8);
    }
}
