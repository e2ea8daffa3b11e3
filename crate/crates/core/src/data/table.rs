use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{FederatedDataset, LabeledSet, UserShard};
use crate::linalg::{Matrix, Vector};
use crate::rng::{substream, Domain};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSchema {
    /// Skip the first line.
    #[serde(default)]
    pub has_header: bool,
}

/// Read a comma-separated table of `d` feature columns followed by one label
/// column. Every row must have the width of the first data row.
pub fn ingest_labeled_table(path: &Path, schema: TableSchema) -> Result<Vec<LabeledExample>> {
    let io_err = |e: &dyn std::fmt::Display| Error::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(&e))?;

    let mut out = Vec::new();
    let mut width: Option<usize> = None;
    for record in reader.records() {
        let record = record.map_err(|e| io_err(&e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if expected < 2 {
            return Err(Error::Parse { line, reason: "need at least one feature column and a label".into() });
        }
        if record.len() != expected {
            return Err(Error::Parse {
                line,
                reason: format!("expected {expected} fields, found {}", record.len()),
            });
        }
        let mut values = Vec::with_capacity(expected);
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                reason: format!("column {}: not a number: {cell:?}", col + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, reason: format!("column {}: non-finite value", col + 1) });
            }
            values.push(v);
        }
        let label = values.pop().expect("width >= 2");
        out.push(LabeledExample { features: values, label });
    }
    if out.is_empty() {
        return Err(Error::NoData);
    }
    Ok(out)
}

fn to_set(examples: &[&LabeledExample], d: usize, sign: f64) -> LabeledSet {
    let features = Matrix::from_fn(examples.len(), d, |i, j| examples[i].features[j]);
    let labels = Vector::from_iterator(examples.len(), examples.iter().map(|e| sign * e.label));
    LabeledSet { features, labels }
}

/// Two-cluster label-flip federation.
///
/// Users `0..m/2` keep the pool's labels, users `m/2..m` see them negated.
/// Each user receives `n` examples drawn without replacement, split as evenly
/// as the pool allows between the two original classes. Examples not handed
/// to any user become the held-out set of both clusters, labeled per cluster.
pub fn shard_label_flip(examples: &[LabeledExample], m: usize, n: usize, seed: u64) -> Result<FederatedDataset> {
    if m < 2 || !m.is_multiple_of(2) {
        return Err(Error::config("m", "label-flip sharding needs an even number of users"));
    }
    if n == 0 {
        return Err(Error::config("n", "must be positive"));
    }
    let needed = m * n;
    if needed > examples.len() {
        return Err(Error::InsufficientData { needed, available: examples.len() });
    }
    let d = examples[0].features.len();
    if let Some(bad) = examples.iter().find(|e| e.features.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.features.len() });
    }

    // Classes ordered by label value.
    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        let key = ordered_key(e.label);
        by_class.entry(key).or_default().push(i);
    }
    if by_class.len() > 2 {
        return Err(Error::arg(format!("expected at most two classes, found {}", by_class.len())));
    }
    let mut pools: Vec<Vec<usize>> = by_class.into_values().collect();
    for (c, pool) in pools.iter_mut().enumerate() {
        let mut rng = substream(seed, Domain::Shuffle, c as u64);
        pool.shuffle(&mut rng);
    }

    let mut cursor = vec![0usize; pools.len()];
    let take = |class: usize, cursor: &mut Vec<usize>| -> Option<usize> {
        let pool = &pools[class];
        let at = cursor[class];
        (at < pool.len()).then(|| {
            cursor[class] += 1;
            pool[at]
        })
    };

    let mut shards = Vec::with_capacity(m);
    let mut assignment = Vec::with_capacity(m);
    for u in 0..m {
        let cluster = usize::from(u >= m / 2);
        let sign = if cluster == 0 { 1.0 } else { -1.0 };
        let mut picked = Vec::with_capacity(n);
        for slot in 0..n {
            // Alternate classes, starting from the user's parity so odd n
            // stays balanced across the federation.
            let preferred = (slot + u) % pools.len();
            let other = (preferred + 1) % pools.len();
            let idx = take(preferred, &mut cursor)
                .or_else(|| take(other, &mut cursor))
                .expect("m * n <= pool size");
            picked.push(&examples[idx]);
        }
        let set = to_set(&picked, d, sign);
        shards.push(UserShard { user_id: u, cluster_id: cluster, features: set.features, labels: set.labels });
        assignment.push(cluster);
    }

    let leftover: Vec<&LabeledExample> = pools
        .iter()
        .zip(&cursor)
        .flat_map(|(pool, &at)| pool[at..].iter().map(|&i| &examples[i]))
        .collect();
    let test_sets = (!leftover.is_empty()).then(|| vec![to_set(&leftover, d, 1.0), to_set(&leftover, d, -1.0)]);

    let ds = FederatedDataset {
        shards,
        true_assignment: assignment,
        k: 2,
        feature_dim: d,
        true_models: None,
        true_intercepts: None,
        test_sets,
        seed: Some(seed),
    };
    ds.validate()?;
    Ok(ds)
}

fn ordered_key(x: f64) -> i64 {
    let bits = x.to_bits() as i64;
    bits ^ (((bits >> 63) as u64) >> 1) as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_three_rows() {
        let f = write_tmp("1,2,+1\n3,4,-1\n5,6,+1\n");
        let ex = ingest_labeled_table(f.path(), TableSchema::default()).unwrap();
        assert_eq!(ex.len(), 3);
        assert_eq!(ex[0].features, vec![1.0, 2.0]);
        assert_eq!(ex[1].label, -1.0);
    }

    #[test]
    fn header_is_skipped() {
        let f = write_tmp("a,b,y\n1,2,1\n");
        let ex = ingest_labeled_table(f.path(), TableSchema { has_header: true }).unwrap();
        assert_eq!(ex.len(), 1);
    }

    #[test]
    fn empty_file_has_no_data_rows() {
        let f = write_tmp("");
        let err = ingest_labeled_table(f.path(), TableSchema::default()).unwrap_err();
        assert_eq!(err.to_string(), "no data rows");
    }

    #[test]
    fn short_row_names_line() {
        let f = write_tmp("1,2,1\n3,4,-1\n5,1\n");
        let err = ingest_labeled_table(f.path(), TableSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(err.to_string().starts_with("line 3"));
    }

    #[test]
    fn non_numeric_cell_is_rejected() {
        let f = write_tmp("1,2,1\n3,x,-1\n");
        assert!(matches!(
            ingest_labeled_table(f.path(), TableSchema::default()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = ingest_labeled_table(Path::new("/nonexistent/table.csv"), TableSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    fn pool(count_per_class: usize) -> Vec<LabeledExample> {
        (0..2 * count_per_class)
            .map(|i| LabeledExample {
                features: vec![i as f64, 1.0],
                label: if i % 2 == 0 { 1.0 } else { -1.0 },
            })
            .collect()
    }

    #[test]
    fn flip_shards_are_balanced_and_disjoint() {
        let examples = pool(300);
        let ds = shard_label_flip(&examples, 100, 4, 7).unwrap();
        assert_eq!(ds.k, 2);
        assert_eq!(ds.true_clusters()[0].len(), 50);
        assert_eq!(ds.true_clusters()[1].len(), 50);
        let mut seen = std::collections::HashSet::new();
        for shard in &ds.shards {
            let sign = if shard.cluster_id == 0 { 1.0 } else { -1.0 };
            // Feature 0 identifies the source example; even ids are class +1.
            let mut per_class = [0usize; 2];
            for r in 0..shard.len() {
                let id = shard.features[(r, 0)] as usize;
                assert!(seen.insert(id), "example {id} reused");
                let original = if id.is_multiple_of(2) { 1.0 } else { -1.0 };
                assert_eq!(shard.labels[r], sign * original);
                per_class[id % 2] += 1;
            }
            assert_eq!(per_class, [2, 2]);
        }
        let test = ds.test_sets.as_ref().unwrap();
        assert_eq!(test[0].len(), 600 - 400);
        assert_eq!(test[1].labels, -&test[0].labels);
    }

    #[test]
    fn flip_semantics_on_identical_examples() {
        let examples = vec![LabeledExample { features: vec![0.5], label: 1.0 }; 2];
        let ds = shard_label_flip(&examples, 2, 1, 0).unwrap();
        assert_eq!(ds.shards[0].labels[0], 1.0);
        assert_eq!(ds.shards[1].labels[0], -1.0);
        assert!(ds.test_sets.is_none());
    }

    #[test]
    fn insufficient_data() {
        let err = shard_label_flip(&pool(3), 4, 2, 0).unwrap_err();
        assert!(err.to_string().starts_with("insufficient data"), "{err}");
    }

    #[test]
    fn odd_user_count_rejected() {
        assert!(matches!(shard_label_flip(&pool(10), 3, 1, 0), Err(Error::InvalidConfig { .. })));
    }
}
