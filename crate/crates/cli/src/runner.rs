//! Runs every `(n, seed, method)` cell of an experiment and collects the
//! report rows in a fixed order.

use std::path::Path;
use std::time::Instant;

use log::{error, info};
use odcl::data::{
    gen_linear_clusters, gen_logistic_clusters, gen_two_class_pool, ingest_labeled_table, logistic_reference_design,
    shard_label_flip, FederatedDataset, GenConfig, TwoClassPool,
};
use odcl::erm::LossSpec;
use odcl::eval::{normalized_mse, recovery_stats, test_accuracy, ExperimentReport, ReportRow};
use odcl::linalg::Vector;
use odcl::protocol::{
    baseline_cluster_oracle, baseline_local, baseline_naive, baseline_oracle_avg, ifca_run, noisy_init, odcl_run,
    random_init, shell_init, ErmMode, ProtocolOutput,
};
use odcl::rng::{derive_seed, Domain};
use rayon::prelude::*;

use crate::config::{DataSpec, ExperimentConfig, IfcaInit, MethodSpec, PoolSource};
use crate::CliError;

/// A cell whose method returned an error. Its report row carries no metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub method: String,
    pub n: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: ExperimentReport,
    pub failures: Vec<CellFailure>,
}

pub fn build_dataset(spec: &DataSpec, n: usize, seed: u64) -> odcl::Result<FederatedDataset> {
    match spec {
        DataSpec::Linear { gen } => gen_linear_clusters(&GenConfig { n, seed, ..gen.clone() }),
        DataSpec::LogisticReference { test_size } => {
            let mut design = logistic_reference_design(n, seed);
            if let Some(t) = test_size {
                design.config.test_size = *t;
            }
            gen_logistic_clusters(&design.config, &design.covariances, &design.centers)
        }
        DataSpec::LabelFlip { source, m } => {
            let examples = match source {
                PoolSource::Synthetic { pool } => gen_two_class_pool(&TwoClassPool { seed, ..pool.clone() })?,
                PoolSource::Table { path, schema } => ingest_labeled_table(path, *schema)?,
            };
            shard_label_flip(&examples, *m, n, seed)
        }
    }
}

/// Full parameter vectors (weights, then the intercept if the loss has one)
/// of the true cluster models.
fn true_params(data: &FederatedDataset, loss: &LossSpec) -> odcl::Result<Vec<Vector>> {
    let models = data.true_models.as_ref().ok_or(odcl::Error::Missing("true models"))?;
    Ok(models
        .iter()
        .enumerate()
        .map(|(k, w)| {
            if loss.has_intercept {
                let b = data.true_intercepts.as_ref().map_or(0.0, |b| b[k]);
                w.clone().insert_row(w.len(), b)
            } else {
                w.clone()
            }
        })
        .collect())
}

fn ifca_init(init: &IfcaInit, data: &FederatedDataset, loss: &LossSpec, seed: u64) -> odcl::Result<Vec<Vector>> {
    let seed = derive_seed(seed, Domain::IfcaInit, 0);
    match init {
        IfcaInit::Shell => shell_init(&true_params(data, loss)?, seed),
        IfcaInit::OracleNoise { std } => {
            let oracle = baseline_cluster_oracle(data, loss)?;
            let centers: Vec<Vector> = data
                .true_clusters()
                .iter()
                .map(|users| oracle.per_user_models[users[0]].clone())
                .collect();
            noisy_init(&centers, *std, seed)
        }
        IfcaInit::Random { scale } => random_init(data.k, loss.param_dim(data.feature_dim), *scale, seed),
    }
}

/// Run one method on one dataset. The run seed replaces any seed in the
/// method's own configuration.
pub fn run_method(spec: &MethodSpec, data: &FederatedDataset, loss: &LossSpec, seed: u64) -> odcl::Result<ProtocolOutput> {
    match spec {
        MethodSpec::Odcl { protocol, .. } => {
            let mut cfg = protocol.clone();
            cfg.seed = seed;
            if let ErmMode::Sgd { sgd } = &mut cfg.erm {
                sgd.seed = seed;
            }
            odcl_run(data, loss, &cfg)
        }
        MethodSpec::OracleAvg { .. } => baseline_oracle_avg(data, loss),
        MethodSpec::ClusterOracle { .. } => baseline_cluster_oracle(data, loss),
        MethodSpec::LocalErm { .. } => baseline_local(data, loss),
        MethodSpec::NaiveAvg { .. } => baseline_naive(data, loss),
        MethodSpec::Ifca { ifca, init, .. } => {
            let start = ifca_init(init, data, loss, seed)?;
            ifca_run(data, loss, &start, &odcl::protocol::IfcaConfig { seed, ..*ifca })
        }
    }
}

/// Metrics of one finished cell. Recovery is reported only for methods that
/// estimate a clustering.
pub fn evaluate(
    spec: &MethodSpec,
    n: usize,
    seed: u64,
    out: &ProtocolOutput,
    data: &FederatedDataset,
) -> odcl::Result<ReportRow> {
    let mse = match data.true_models {
        Some(_) => Some(normalized_mse(out, data)?),
        None => None,
    };
    let acc = match (&data.test_sets, out.classification) {
        (Some(sets), true) => Some(test_accuracy(out, sets, &data.true_assignment)?),
        _ => None,
    };
    let (exact, k_prime) = match spec {
        MethodSpec::Odcl { .. } | MethodSpec::Ifca { .. } => {
            let stats = recovery_stats(&out.server_clustering.assignment, &data.true_assignment)?;
            (Some(stats.exact), Some(out.server_clustering.k_prime()))
        }
        _ => (None, None),
    };
    Ok(ReportRow {
        method: spec.label(),
        n,
        seed,
        normalized_mse: mse,
        test_accuracy: acc,
        exact_recovery: exact,
        k_prime,
        comm_rounds: out.comm_rounds,
        wall_time_ms: 0.0,
    })
}

fn run_cell(
    cfg: &ExperimentConfig,
    spec: &MethodSpec,
    n: usize,
    seed: u64,
    data: &odcl::Result<FederatedDataset>,
) -> (ReportRow, Option<CellFailure>) {
    let started = Instant::now();
    let result = data
        .as_ref()
        .map_err(|e| odcl::Error::InvalidArgument(format!("data generation failed: {e}")))
        .and_then(|data| run_method(spec, data, &cfg.loss, seed).and_then(|out| evaluate(spec, n, seed, &out, data)));
    let wall = if cfg.record_wall_time { started.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
    match result {
        Ok(mut row) => {
            row.wall_time_ms = wall;
            (row, None)
        }
        Err(e) => {
            error!("{} n={n} seed={seed}: {e}", spec.label());
            let row = ReportRow {
                method: spec.label(),
                n,
                seed,
                normalized_mse: None,
                test_accuracy: None,
                exact_recovery: None,
                k_prime: None,
                comm_rounds: 0,
                wall_time_ms: wall,
            };
            let failure = CellFailure { method: spec.label(), n, seed, error: e.to_string() };
            (row, Some(failure))
        }
    }
}

/// Every cell, without touching the file system. Rows are ordered by `n`,
/// then seed, then method, whatever the thread count.
pub fn collect(cfg: &ExperimentConfig) -> RunOutcome {
    let grid: Vec<(usize, u64)> = cfg.sweep.iter().flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s))).collect();
    let cells: Vec<Vec<(ReportRow, Option<CellFailure>)>> = grid
        .par_iter()
        .map(|&(n, seed)| {
            let data = build_dataset(&cfg.data, n, seed);
            let rows = cfg.methods.par_iter().map(|spec| run_cell(cfg, spec, n, seed, &data)).collect();
            info!("finished n={n} seed={seed}");
            rows
        })
        .collect();
    let mut report = ExperimentReport::default();
    let mut failures = Vec::new();
    for (row, failure) in cells.into_iter().flatten() {
        report.rows.push(row);
        failures.extend(failure);
    }
    RunOutcome { report, failures }
}

pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<(), CliError> {
    let io = |p: &Path, e: &dyn std::fmt::Display| CliError::Io { path: p.display().to_string(), reason: e.to_string() };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, &e))?;
    let path = dir.join(REPORT_FILE);
    let file = std::fs::File::create(&path).map_err(|e| io(&path, &e))?;
    report.write_csv(file)?;
    let path = dir.join(SUMMARY_FILE);
    std::fs::write(&path, report.summary_json()? + "\n").map_err(|e| io(&path, &e))
}

/// Run the experiment and write `report.csv` and `summary.json` into the
/// configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let outcome = collect(cfg);
    write_outputs(&outcome.report, &cfg.output_dir)?;
    Ok(outcome)
}

/// Re-summarize an existing report directory.
pub fn resummarize(dir: &Path) -> Result<ExperimentReport, CliError> {
    let path = dir.join(REPORT_FILE);
    if !path.is_file() {
        return Err(CliError::EmptyReport(dir.display().to_string()));
    }
    let file = std::fs::File::open(&path).map_err(|e| CliError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    let report = ExperimentReport::read_csv(file)?;
    if report.rows.is_empty() {
        return Err(CliError::EmptyReport(dir.display().to_string()));
    }
    write_outputs(&report, dir)?;
    Ok(report)
}
