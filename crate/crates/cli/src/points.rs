//! Standalone clustering of a point file.

use std::path::Path;

use odcl::clustering::{
    clusterpath_select, convex_cluster, kmeans_pp, spectral_kmeans, spectral_kmeans_part1, ClusterpathConfig, ClusteringResult,
    PointSet, DEFAULT_RESTARTS, DEFAULT_TOL,
};
use odcl::linalg::Vector;

use crate::CliError;

/// Clustering algorithms available from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PointAlgo {
    Convex,
    Clusterpath,
    KmeansPp,
    Spectral,
    SpectralPart1,
}

/// Read one point per line, comma separated. A first line that does not parse
/// as numbers is taken as a header.
pub fn read_points(path: &Path) -> Result<PointSet, CliError> {
    let io = |e: &dyn std::fmt::Display| CliError::Io { path: path.display().to_string(), reason: e.to_string() };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io(&e))?;
    let mut rows: Vec<Vector> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io(&e))?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(Vector::from_vec(v)),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(odcl::Error::Parse { line: i + 1, reason: e.to_string() }.into()),
        }
    }
    Ok(PointSet::from_rows(&rows)?)
}

pub fn cluster_points(
    pts: &PointSet,
    algo: PointAlgo,
    lambda: Option<f64>,
    k: Option<usize>,
    seed: u64,
) -> Result<ClusteringResult, CliError> {
    let need_k = || k.ok_or_else(|| CliError::Config { field: "k".into(), reason: "required by this algorithm".into() });
    let result = match algo {
        PointAlgo::Convex => {
            let lambda = lambda.ok_or_else(|| CliError::Config { field: "lambda".into(), reason: "required for convex clustering".into() })?;
            convex_cluster(pts, lambda, DEFAULT_TOL)?
        }
        PointAlgo::Clusterpath => clusterpath_select(pts, &ClusterpathConfig::default())?.1,
        PointAlgo::KmeansPp => kmeans_pp(pts, need_k()?, DEFAULT_RESTARTS, seed)?,
        PointAlgo::Spectral => spectral_kmeans(pts, need_k()?, seed)?,
        PointAlgo::SpectralPart1 => spectral_kmeans_part1(pts, need_k()?, seed)?,
    };
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn header_line_is_skipped() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "x,y\n0,0\n1,0\n5,5").unwrap();
        let pts = read_points(f.path()).unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts.dim(), 2);
    }

    #[test]
    fn tiny_lambda_gives_singletons() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "0,0\n1,0\n0,1\n1,1").unwrap();
        let pts = read_points(f.path()).unwrap();
        let r = cluster_points(&pts, PointAlgo::Convex, Some(1e-9), None, 0).unwrap();
        assert_eq!(r.k_prime(), 4);
    }

    #[test]
    fn kmeans_needs_k() {
        let pts = PointSet::from_rows(&[Vector::from_vec(vec![0.0]), Vector::from_vec(vec![1.0])]).unwrap();
        assert!(cluster_points(&pts, PointAlgo::KmeansPp, None, None, 0).is_err());
    }
}
