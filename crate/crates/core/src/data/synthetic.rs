use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FederatedDataset, LabeledExample, LabeledSet, UserShard};
use crate::linalg::{Matrix, Vector};
use crate::rng::{substream, Domain};
use crate::{Error, Result};

/// How the per-cluster optimal models are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelLaw {
    /// Component `j` of cluster `k`'s model is drawn from `U([lo_k, hi_k])`.
    Intervals(Vec<[f64; 2]>),
    /// Fixed model per cluster.
    Explicit(Vec<Vec<f64>>),
}

fn default_noise() -> f64 {
    1.0
}

fn default_test_size() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub d: usize,
    /// Users per cluster. `None` means balanced, which requires `k | m`.
    #[serde(default)]
    pub cluster_sizes: Option<Vec<usize>>,
    pub model_law: ModelLaw,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    /// Nonzero feature components per sample; `None` means dense.
    #[serde(default)]
    pub feature_sparsity: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Held-out samples per cluster.
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    /// Optimal intercept per cluster (logistic law only).
    #[serde(default)]
    pub intercepts: Option<Vec<f64>>,
}

impl GenConfig {
    /// Ten-cluster linear-regression federation: `d = 20`, `m = 100`, balanced,
    /// cluster models on the unit intervals `[1,2], [4,5], ..., [13,14]` and
    /// their negatives, five nonzero Gaussian features per sample.
    pub fn ten_cluster_linear(n: usize, seed: u64) -> Self {
        let mut intervals: Vec<[f64; 2]> = (0..5).map(|j| [1.0 + 3.0 * j as f64, 2.0 + 3.0 * j as f64]).collect();
        let negated: Vec<[f64; 2]> = intervals.iter().map(|[lo, hi]| [-hi, -lo]).collect();
        intervals.extend(negated);
        GenConfig {
            k: 10,
            m: 100,
            n,
            d: 20,
            cluster_sizes: None,
            model_law: ModelLaw::Intervals(intervals),
            noise_std: 1.0,
            feature_sparsity: Some(5),
            seed,
            test_size: default_test_size(),
            intercepts: None,
        }
    }

    /// Four-cluster linear federation with models on `[0,1], [1,2], [-1,0],
    /// [-2,-1]`, otherwise as [`GenConfig::ten_cluster_linear`].
    pub fn four_cluster_linear(n: usize, seed: u64) -> Self {
        GenConfig {
            k: 4,
            model_law: ModelLaw::Intervals(vec![[0.0, 1.0], [1.0, 2.0], [-1.0, 0.0], [-2.0, -1.0]]),
            ..Self::ten_cluster_linear(n, seed)
        }
    }

    pub fn sizes(&self) -> Result<Vec<usize>> {
        match &self.cluster_sizes {
            Some(s) => Ok(s.clone()),
            None => {
                if self.k == 0 || !self.m.is_multiple_of(self.k) {
                    return Err(Error::config(
                        "cluster_sizes",
                        format!("balanced clustering needs k | m (k = {}, m = {})", self.k, self.m),
                    ));
                }
                Ok(vec![self.m / self.k; self.k])
            }
        }
    }

    pub fn sparsity(&self) -> usize {
        self.feature_sparsity.unwrap_or(self.d)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k", self.k), ("m", self.m), ("n", self.n), ("d", self.d)] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        let sizes = self.sizes()?;
        if sizes.len() != self.k {
            return Err(Error::config("cluster_sizes", format!("expected {} entries, got {}", self.k, sizes.len())));
        }
        if sizes.contains(&0) {
            return Err(Error::config("cluster_sizes", "every cluster needs at least one user"));
        }
        if sizes.iter().sum::<usize>() != self.m {
            return Err(Error::config("cluster_sizes", format!("sizes sum to {}, expected m = {}", sizes.iter().sum::<usize>(), self.m)));
        }
        match &self.model_law {
            ModelLaw::Intervals(iv) => {
                if iv.len() != self.k {
                    return Err(Error::config("model_law", format!("expected {} intervals, got {}", self.k, iv.len())));
                }
                if iv.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
                    return Err(Error::config("model_law", "interval endpoints must be finite with lo <= hi"));
                }
            }
            ModelLaw::Explicit(models) => {
                if models.len() != self.k {
                    return Err(Error::config("model_law", format!("expected {} models, got {}", self.k, models.len())));
                }
                if models.iter().any(|v| v.len() != self.d) {
                    return Err(Error::config("model_law", format!("every model must have length d = {}", self.d)));
                }
                if models.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(Error::config("model_law", "non-finite model entry"));
                }
            }
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::config("noise_std", "must be finite and nonnegative"));
        }
        let s = self.sparsity();
        if s == 0 || s > self.d {
            return Err(Error::config("feature_sparsity", format!("must be in 1..={}", self.d)));
        }
        if let Some(b) = &self.intercepts {
            if b.len() != self.k {
                return Err(Error::config("intercepts", format!("expected {} entries", self.k)));
            }
        }
        Ok(())
    }

    fn assignment(&self) -> Result<Vec<usize>> {
        let sizes = self.sizes()?;
        Ok(sizes.iter().enumerate().flat_map(|(k, &s)| std::iter::repeat_n(k, s)).collect())
    }

    fn draw_models(&self) -> Vec<Vector> {
        match &self.model_law {
            ModelLaw::Explicit(models) => models.iter().map(|v| Vector::from_vec(v.clone())).collect(),
            ModelLaw::Intervals(iv) => iv
                .iter()
                .enumerate()
                .map(|(k, &[lo, hi])| {
                    let mut rng = substream(self.seed, Domain::ClusterModel, k as u64);
                    Vector::from_fn(self.d, |_, _| lo + (hi - lo) * rng.random::<f64>())
                })
                .collect(),
        }
    }
}

fn sparse_gaussian(rng: &mut ChaCha8Rng, d: usize, s: usize) -> Vector {
    let mut x = Vector::zeros(d);
    if s == d {
        for v in x.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    } else {
        for j in sample(rng, d, s).into_iter() {
            x[j] = rng.sample(StandardNormal);
        }
    }
    x
}

fn linear_samples(rng: &mut ChaCha8Rng, count: usize, cfg: &GenConfig, model: &Vector) -> (Matrix, Vector) {
    let mut features = Matrix::zeros(count, cfg.d);
    let mut labels = Vector::zeros(count);
    let s = cfg.sparsity();
    for r in 0..count {
        let x = sparse_gaussian(rng, cfg.d, s);
        let noise: f64 = rng.sample(StandardNormal);
        labels[r] = x.dot(model) + cfg.noise_std * noise;
        features.set_row(r, &x.transpose());
    }
    (features, labels)
}

/// Linear-regression federation `y = <x, u_k> + eps`, `eps ~ N(0, noise_std^2)`.
///
/// Each sample has `feature_sparsity` standard Gaussian components at a fresh
/// random support; the rest are zero. Users, cluster models and test sets
/// each draw from their own substream of `cfg.seed`.
pub fn gen_linear_clusters(cfg: &GenConfig) -> Result<FederatedDataset> {
    cfg.validate()?;
    let assignment = cfg.assignment()?;
    let models = cfg.draw_models();

    let shards: Vec<UserShard> = assignment
        .par_iter()
        .enumerate()
        .map(|(u, &c)| {
            let mut rng = substream(cfg.seed, Domain::UserShard, u as u64);
            let (features, labels) = linear_samples(&mut rng, cfg.n, cfg, &models[c]);
            UserShard { user_id: u, cluster_id: c, features, labels }
        })
        .collect();

    let test_sets = (cfg.test_size > 0).then(|| {
        models
            .iter()
            .enumerate()
            .map(|(k, model)| {
                let mut rng = substream(cfg.seed, Domain::TestSet, k as u64);
                let (features, labels) = linear_samples(&mut rng, cfg.test_size, cfg, model);
                LabeledSet { features, labels }
            })
            .collect()
    });

    let ds = FederatedDataset {
        shards,
        true_assignment: assignment,
        k: cfg.k,
        feature_dim: cfg.d,
        true_models: Some(models),
        true_intercepts: None,
        test_sets,
        seed: Some(cfg.seed),
    };
    ds.validate()?;
    Ok(ds)
}

/// Square root factor `L` with `L L^T = cov`, via the eigendecomposition so
/// singular PSD covariances are accepted.
fn covariance_factor(index: usize, cov: &Matrix, d: usize) -> Result<Matrix> {
    if cov.nrows() != d || cov.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: cov.nrows() });
    }
    let scale = cov.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
    if (cov - cov.transpose()).iter().any(|x| x.abs() > 1e-12 * scale) {
        return Err(Error::NotSymmetric { index });
    }
    let eig = cov.clone().symmetric_eigen();
    let min_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eigenvalue < -1e-10 * scale {
        return Err(Error::NotPsd { index, min_eigenvalue });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * Matrix::from_diagonal(&roots))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logistic_samples(
    rng: &mut ChaCha8Rng,
    count: usize,
    factor: &Matrix,
    center: &Vector,
    model: &Vector,
    intercept: f64,
) -> (Matrix, Vector) {
    let d = center.len();
    let mut features = Matrix::zeros(count, d);
    let mut labels = Vector::zeros(count);
    for r in 0..count {
        let z = Vector::from_fn(d, |_, _| rng.sample(StandardNormal));
        let x = center + factor * z;
        let p = sigmoid(x.dot(model) + intercept);
        labels[r] = if rng.random::<f64>() < p { 1.0 } else { -1.0 };
        features.set_row(r, &x.transpose());
    }
    (features, labels)
}

/// Logistic federation: `x ~ N(center_k, cov_k)` and `y = 2 Bernoulli(p) - 1`
/// with `p = sigmoid(<x, theta_k> + b_k)`. `feature_sparsity` and `noise_std`
/// are not used by this law.
pub fn gen_logistic_clusters(cfg: &GenConfig, covariances: &[Matrix], centers: &[Vector]) -> Result<FederatedDataset> {
    cfg.validate()?;
    if covariances.len() != cfg.k {
        return Err(Error::DimensionMismatch { expected: cfg.k, got: covariances.len() });
    }
    if centers.len() != cfg.k {
        return Err(Error::DimensionMismatch { expected: cfg.k, got: centers.len() });
    }
    if let Some(c) = centers.iter().find(|c| c.len() != cfg.d) {
        return Err(Error::DimensionMismatch { expected: cfg.d, got: c.len() });
    }
    let factors = covariances
        .iter()
        .enumerate()
        .map(|(i, c)| covariance_factor(i, c, cfg.d))
        .collect::<Result<Vec<_>>>()?;
    let assignment = cfg.assignment()?;
    let models = cfg.draw_models();
    let intercepts = cfg.intercepts.clone().unwrap_or_else(|| vec![0.0; cfg.k]);

    let shards: Vec<UserShard> = assignment
        .par_iter()
        .enumerate()
        .map(|(u, &c)| {
            let mut rng = substream(cfg.seed, Domain::UserShard, u as u64);
            let (features, labels) = logistic_samples(&mut rng, cfg.n, &factors[c], &centers[c], &models[c], intercepts[c]);
            UserShard { user_id: u, cluster_id: c, features, labels }
        })
        .collect();

    let test_sets = (cfg.test_size > 0).then(|| {
        (0..cfg.k)
            .map(|k| {
                let mut rng = substream(cfg.seed, Domain::TestSet, k as u64);
                let (features, labels) =
                    logistic_samples(&mut rng, cfg.test_size, &factors[k], &centers[k], &models[k], intercepts[k]);
                LabeledSet { features, labels }
            })
            .collect()
    });

    let ds = FederatedDataset {
        shards,
        true_assignment: assignment,
        k: cfg.k,
        feature_dim: cfg.d,
        true_models: Some(models),
        true_intercepts: Some(intercepts),
        test_sets,
        seed: Some(cfg.seed),
    };
    ds.validate()?;
    Ok(ds)
}

/// Four-cluster logistic design in two dimensions.
#[derive(Debug, Clone)]
pub struct LogisticDesign {
    pub config: GenConfig,
    pub covariances: Vec<Matrix>,
    pub centers: Vec<Vector>,
}

/// Covariance of the third cluster as originally tabulated. It is indefinite
/// (eigenvalues 3 and -1), so [`logistic_reference_design`] substitutes
/// [`SIGMA_3_SUBSTITUTE`].
pub const SIGMA_3_TABULATED: [f64; 4] = [1.0, 2.0, 2.0, 1.0];
pub const SIGMA_3_SUBSTITUTE: [f64; 4] = [1.0, 0.5, 0.5, 1.0];

/// `theta_1 = [1,-1]`, `theta_2 = [1,0]`, `theta_3 = [-1,1]`, `theta_4 = [0,-1]`,
/// zero intercepts, features centered at the origin, `m = 100` balanced.
pub fn logistic_reference_design(n: usize, seed: u64) -> LogisticDesign {
    let config = GenConfig {
        k: 4,
        m: 100,
        n,
        d: 2,
        cluster_sizes: None,
        model_law: ModelLaw::Explicit(vec![vec![1.0, -1.0], vec![1.0, 0.0], vec![-1.0, 1.0], vec![0.0, -1.0]]),
        noise_std: 0.0,
        feature_sparsity: None,
        seed,
        test_size: default_test_size(),
        intercepts: Some(vec![0.0; 4]),
    };
    let covariances = vec![
        Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
        Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]),
        Matrix::from_row_slice(2, 2, &SIGMA_3_SUBSTITUTE),
        Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]),
    ];
    let centers = vec![Vector::zeros(2); 4];
    LogisticDesign { config, covariances, centers }
}

/// Two Gaussian classes standing in for a two-digit image pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoClassPool {
    pub d: usize,
    pub per_class: usize,
    /// Distance between the two class means.
    pub separation: f64,
    /// Per-coordinate standard deviation around the class mean.
    pub spread: f64,
    /// Per-coordinate standard deviation of the offset shared by both class
    /// means. Large values mimic nonnegative pixel data, whose examples all
    /// sit far from the origin.
    #[serde(default = "default_offset_scale")]
    pub offset_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_offset_scale() -> f64 {
    0.5
}

/// Labels are `+1` for the first class and `-1` for the second. Class means
/// are `c +- (separation / 2) v` for a random unit direction `v` and a random
/// offset `c`, so the classes are not symmetric about the origin.
pub fn gen_two_class_pool(pool: &TwoClassPool) -> Result<Vec<LabeledExample>> {
    if pool.d == 0 || pool.per_class == 0 {
        return Err(Error::config("pool", "d and per_class must be positive"));
    }
    if !(pool.separation >= 0.0 && pool.spread >= 0.0 && pool.offset_scale >= 0.0) {
        return Err(Error::config("pool", "separation, spread and offset_scale must be nonnegative"));
    }
    let mut rng = substream(pool.seed, Domain::ClusterModel, 0);
    let dir = Vector::from_fn(pool.d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let dir = &dir / dir.norm().max(f64::MIN_POSITIVE);
    let offset = Vector::from_fn(pool.d, |_, _| pool.offset_scale * rng.sample::<f64, _>(StandardNormal));
    let means = [&offset + &dir * (pool.separation / 2.0), &offset - &dir * (pool.separation / 2.0)];
    let mut out = Vec::with_capacity(2 * pool.per_class);
    for (class, mean) in means.iter().enumerate() {
        let mut rng = substream(pool.seed, Domain::UserShard, class as u64);
        let label = if class == 0 { 1.0 } else { -1.0 };
        for _ in 0..pool.per_class {
            let features = mean.iter().map(|&m| m + pool.spread * rng.sample::<f64, _>(StandardNormal)).collect();
            out.push(LabeledExample { features, label });
        }
    }
    Ok(out)
}
