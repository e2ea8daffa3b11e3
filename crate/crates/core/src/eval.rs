//! Metrics and experiment reports.

use std::collections::BTreeMap;
use std::io::Write;

use pathfinding::prelude::{kuhn_munkres, Matrix as Weights};
use serde::{Deserialize, Serialize};

use crate::data::{FederatedDataset, LabeledSet};
use crate::linalg::Vector;
use crate::protocol::ProtocolOutput;
use crate::{Error, Result};

/// Parameters compared against the truth: weights, plus the intercept when
/// both sides carry one.
fn truth_params(ds: &FederatedDataset, k: usize, with_intercept: bool) -> Result<Vector> {
    let models = ds.true_models.as_ref().ok_or(Error::Missing("true models"))?;
    let w = &models[k];
    match (&ds.true_intercepts, with_intercept) {
        (Some(b), true) => Ok(w.clone().insert_row(w.len(), b[k])),
        _ => Ok(w.clone()),
    }
}

/// `(1/m) Σ_i ||θ_i - θ⋆_(i)||² / ||θ⋆_(i)||²`.
pub fn normalized_mse(output: &ProtocolOutput, truth: &FederatedDataset) -> Result<f64> {
    normalized_mse_of(&output.per_user_models, output.has_intercept, truth)
}

pub fn normalized_mse_of(models: &[Vector], has_intercept: bool, truth: &FederatedDataset) -> Result<f64> {
    if models.len() != truth.num_users() {
        return Err(Error::DimensionMismatch { expected: truth.num_users(), got: models.len() });
    }
    let with_intercept = has_intercept && truth.true_intercepts.is_some();
    let mut total = 0.0;
    for (u, model) in models.iter().enumerate() {
        let star = truth_params(truth, truth.true_assignment[u], with_intercept)?;
        let est = if has_intercept && !with_intercept { model.rows(0, model.len() - 1).into_owned() } else { model.clone() };
        if est.len() != star.len() {
            return Err(Error::DimensionMismatch { expected: star.len(), got: est.len() });
        }
        let denom = star.norm_squared();
        if denom == 0.0 {
            return Err(Error::arg(format!("true model of cluster {} has zero norm", truth.true_assignment[u])));
        }
        total += (est - star).norm_squared() / denom;
    }
    Ok(total / models.len() as f64)
}

/// Fraction of `set` classified correctly by `sign(<x, w> + b)`, with
/// `sign(0) = +1`.
pub fn accuracy_on(params: &Vector, has_intercept: bool, set: &LabeledSet) -> Result<f64> {
    let d = set.features.ncols();
    if params.len() != d + usize::from(has_intercept) {
        return Err(Error::DimensionMismatch { expected: d + usize::from(has_intercept), got: params.len() });
    }
    let n = set.features.nrows();
    if n == 0 {
        return Err(Error::NoData);
    }
    let correct = (0..n)
        .filter(|&r| {
            let z = crate::erm::score(params, has_intercept, &set.features, r);
            let pred = if z >= 0.0 { 1.0 } else { -1.0 };
            pred == set.labels[r]
        })
        .count();
    Ok(correct as f64 / n as f64)
}

/// Mean over users of the accuracy on the held-out set of the user's cluster.
pub fn test_accuracy(output: &ProtocolOutput, test_sets: &[LabeledSet], truth: &[usize]) -> Result<f64> {
    if !output.classification {
        return Err(Error::arg("test accuracy needs a classification loss"));
    }
    test_accuracy_of(&output.per_user_models, output.has_intercept, test_sets, truth)
}

pub fn test_accuracy_of(models: &[Vector], has_intercept: bool, test_sets: &[LabeledSet], truth: &[usize]) -> Result<f64> {
    if models.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: models.len() });
    }
    let mut total = 0.0;
    for (u, model) in models.iter().enumerate() {
        let set = test_sets.get(truth[u]).ok_or(Error::Missing("test set"))?;
        total += accuracy_on(model, has_intercept, set)?;
    }
    Ok(total / models.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStats {
    pub exact: bool,
    /// `overlap[k][l] = |C'_k ∩ C_l|`.
    pub overlap: Vec<Vec<usize>>,
    /// `eps[k][l] = |C'_k ∩ C_l| / |C'_k|`.
    pub eps: Vec<Vec<f64>>,
    pub k_prime: usize,
    /// Truth cluster matched to each predicted cluster (None if unmatched).
    pub matching: Vec<Option<usize>>,
}

impl RecoveryStats {
    /// Points of predicted cluster `k` that belong to a truth cluster other
    /// than its match.
    pub fn contamination(&self, k: usize) -> usize {
        let matched = self.matching[k];
        self.overlap[k].iter().enumerate().filter(|(l, _)| Some(*l) != matched).map(|(_, c)| c).sum()
    }

    /// `ε_k = Σ_{l != match(k)} ε_kl`.
    pub fn eps_off(&self, k: usize) -> f64 {
        let matched = self.matching[k];
        self.eps[k].iter().enumerate().filter(|(l, _)| Some(*l) != matched).map(|(_, e)| e).sum()
    }

    /// `|C'_k ∩ C_l|` for the predicted cluster matched to truth cluster `l`.
    pub fn matched_overlap(&self, l: usize) -> usize {
        self.matching.iter().position(|m| *m == Some(l)).map_or(0, |k| self.overlap[k][l])
    }
}

/// Replaces each label by its rank among the distinct labels, so unused label
/// values do not show up as empty clusters. Dense labels are left unchanged.
fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let ranked = labels.iter().map(|l| distinct.binary_search(l).expect("label is present")).collect();
    (ranked, distinct.len())
}

/// Overlap counts between predicted and true clusters, with exactness decided
/// by a maximum-weight matching of predicted to true clusters.
pub fn recovery_stats(assignment: &[usize], truth: &[usize]) -> Result<RecoveryStats> {
    if assignment.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: assignment.len() });
    }
    let m = truth.len();
    let (assignment, kp) = compact(assignment);
    let (truth, k) = compact(truth);
    let mut overlap = vec![vec![0usize; k]; kp];
    for (a, t) in assignment.iter().zip(&truth) {
        overlap[*a][*t] += 1;
    }
    let eps = overlap
        .iter()
        .map(|row| {
            let size: usize = row.iter().sum();
            row.iter().map(|&c| if size > 0 { c as f64 / size as f64 } else { 0.0 }).collect()
        })
        .collect();
    let side = kp.max(k).max(1);
    let weights = Weights::from_fn(side, side, |(r, c)| if r < kp && c < k { overlap[r][c] as i64 } else { 0 });
    let (total, cols) = kuhn_munkres(&weights);
    let matching = (0..kp).map(|r| if cols[r] < k { Some(cols[r]) } else { None }).collect();
    Ok(RecoveryStats { exact: kp == k && total as usize == m, overlap, eps, k_prime: kp, matching })
}

/// Least-squares slope of `log(mse)` against `log(n)`.
pub fn decay_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::arg("decay slope needs at least three points"));
    }
    if points.windows(2).any(|w| !(w[1].0 > w[0].0)) || points[0].0 <= 0.0 {
        return Err(Error::arg("n must be positive and strictly increasing"));
    }
    if points.iter().any(|p| !(p.1 > 0.0)) {
        return Err(Error::arg("mse must be positive"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    if v.len() % 2 == 1 {
        v[h]
    } else {
        0.5 * (v[h - 1] + v[h])
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One report row; column order is fixed by the field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub n: usize,
    pub seed: u64,
    pub normalized_mse: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub exact_recovery: Option<bool>,
    pub k_prime: Option<usize>,
    pub comm_rounds: usize,
    pub wall_time_ms: f64,
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "method",
    "n",
    "seed",
    "normalized_mse",
    "test_accuracy",
    "exact_recovery",
    "k_prime",
    "comm_rounds",
    "wall_time_ms",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl Aggregate {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(values);
        Some(Aggregate { count: values.len(), mean, std, median: median(values) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub n: usize,
    pub runs: usize,
    pub normalized_mse: Option<Aggregate>,
    pub test_accuracy: Option<Aggregate>,
    pub exact_recovery_rate: Option<f64>,
    pub mean_k_prime: Option<f64>,
    pub comm_rounds: usize,
}

impl ExperimentReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::arg(e.to_string()))?;
        }
        if self.rows.is_empty() {
            w.write_record(REPORT_COLUMNS).map_err(|e| Error::arg(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::arg(e.to_string()))
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let rows = r
            .deserialize()
            .enumerate()
            .map(|(i, row)| row.map_err(|e| Error::Parse { line: i + 2, reason: e.to_string() }))
            .collect::<Result<Vec<ReportRow>>>()?;
        Ok(ExperimentReport { rows })
    }

    /// Per `(method, n)` aggregates, sorted by method then `n`. Wall time is
    /// left out.
    pub fn summarize(&self) -> Vec<MethodSummary> {
        let mut groups: BTreeMap<(String, usize), Vec<&ReportRow>> = BTreeMap::new();
        for row in &self.rows {
            groups.entry((row.method.clone(), row.n)).or_default().push(row);
        }
        groups
            .into_iter()
            .map(|((method, n), rows)| {
                let mse: Vec<f64> = rows.iter().filter_map(|r| r.normalized_mse).collect();
                let acc: Vec<f64> = rows.iter().filter_map(|r| r.test_accuracy).collect();
                let exact: Vec<bool> = rows.iter().filter_map(|r| r.exact_recovery).collect();
                let kp: Vec<f64> = rows.iter().filter_map(|r| r.k_prime.map(|k| k as f64)).collect();
                MethodSummary {
                    method,
                    n,
                    runs: rows.len(),
                    normalized_mse: Aggregate::of(&mse),
                    test_accuracy: Aggregate::of(&acc),
                    exact_recovery_rate: (!exact.is_empty())
                        .then(|| exact.iter().filter(|&&e| e).count() as f64 / exact.len() as f64),
                    mean_k_prime: (!kp.is_empty()).then(|| mean_std(&kp).0),
                    comm_rounds: rows.iter().map(|r| r.comm_rounds).max().unwrap_or(0),
                }
            })
            .collect()
    }

    pub fn summary_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.summarize()).map_err(|e| Error::arg(e.to_string()))
    }
}
