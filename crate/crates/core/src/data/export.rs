//! Dataset directory format: `manifest.json`, one `user_<i>.csv` per user and
//! one `test_<k>.csv` per cluster when held-out data exists. Tables carry the
//! feature columns followed by the label, no header.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ingest_labeled_table, FederatedDataset, LabeledExample, LabeledSet, TableSchema, UserShard};
use crate::linalg::{Matrix, Vector};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub k: usize,
    pub m: usize,
    pub n: Vec<usize>,
    pub d: usize,
    pub true_assignment: Vec<usize>,
    pub true_models: Option<Vec<Vec<f64>>>,
    pub true_intercepts: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub has_test_sets: bool,
}

fn io(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io { path: path.display().to_string(), reason: e.to_string() }
}

fn write_table(path: &Path, features: &Matrix, labels: &Vector) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| io(path, e))?;
    for r in 0..features.nrows() {
        let row: Vec<String> = features
            .row(r)
            .iter()
            .chain(std::iter::once(&labels[r]))
            .map(|v| format!("{v:e}"))
            .collect();
        w.write_record(&row).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

fn read_table(path: &Path, d: usize) -> Result<(Matrix, Vector)> {
    let rows: Vec<LabeledExample> = ingest_labeled_table(path, TableSchema::default())?;
    if let Some(bad) = rows.iter().find(|r| r.features.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.features.len() });
    }
    let features = Matrix::from_fn(rows.len(), d, |i, j| rows[i].features[j]);
    let labels = Vector::from_iterator(rows.len(), rows.iter().map(|r| r.label));
    Ok((features, labels))
}

pub fn export_dataset(ds: &FederatedDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let manifest = Manifest {
        k: ds.k,
        m: ds.num_users(),
        n: ds.shards.iter().map(|s| s.len()).collect(),
        d: ds.feature_dim,
        true_assignment: ds.true_assignment.clone(),
        true_models: ds.true_models.as_ref().map(|ms| ms.iter().map(|v| v.iter().cloned().collect()).collect()),
        true_intercepts: ds.true_intercepts.clone(),
        seed: ds.seed,
        has_test_sets: ds.test_sets.is_some(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| io(&path, e))?;
    fs::write(&path, json).map_err(|e| io(&path, e))?;
    for shard in &ds.shards {
        write_table(&dir.join(format!("user_{}.csv", shard.user_id)), &shard.features, &shard.labels)?;
    }
    if let Some(tests) = &ds.test_sets {
        for (k, t) in tests.iter().enumerate() {
            write_table(&dir.join(format!("test_{k}.csv")), &t.features, &t.labels)?;
        }
    }
    Ok(())
}

pub fn import_dataset(dir: &Path) -> Result<FederatedDataset> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| io(&path, e))?;
    if manifest.true_assignment.len() != manifest.m {
        return Err(Error::DimensionMismatch { expected: manifest.m, got: manifest.true_assignment.len() });
    }
    let shards = (0..manifest.m)
        .map(|u| {
            let (features, labels) = read_table(&dir.join(format!("user_{u}.csv")), manifest.d)?;
            Ok(UserShard { user_id: u, cluster_id: manifest.true_assignment[u], features, labels })
        })
        .collect::<Result<Vec<_>>>()?;
    let test_sets = if manifest.has_test_sets {
        Some(
            (0..manifest.k)
                .map(|k| {
                    let (features, labels) = read_table(&dir.join(format!("test_{k}.csv")), manifest.d)?;
                    Ok(LabeledSet { features, labels })
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let ds = FederatedDataset {
        shards,
        true_assignment: manifest.true_assignment,
        k: manifest.k,
        feature_dim: manifest.d,
        true_models: manifest.true_models.map(|ms| ms.into_iter().map(Vector::from_vec).collect()),
        true_intercepts: manifest.true_intercepts,
        test_sets,
        seed: manifest.seed,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_linear_clusters, GenConfig};

    #[test]
    fn export_then_import_is_lossless() {
        let cfg = GenConfig { m: 8, test_size: 3, ..GenConfig::four_cluster_linear(6, 2) };
        let ds = gen_linear_clusters(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&ds, dir.path()).unwrap();
        let back = import_dataset(dir.path()).unwrap();
        assert_eq!(ds, back);
    }
}
