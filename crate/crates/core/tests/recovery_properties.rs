//! Exact-recovery properties of the clustering algorithms on instances built
//! to satisfy their separation conditions.

use odcl::clustering::{
    check_separability, convex_cluster, kmeans_pp, lambda_interval, recovery_interval, spectral_kmeans, PointSet,
    DEFAULT_TOL,
};
use odcl::eval::recovery_stats;
use odcl::linalg::Vector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Clusters of the given sizes inside balls of radius at most 1/2 around
/// centers whose minimum pairwise distance is `gap`.
fn instance(seed: u64, sizes: &[usize], d: usize, gap: f64) -> (PointSet, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vector> = sizes.iter().map(|_| Vector::from_fn(d, |_, _| rng.sample(StandardNormal))).collect();
    let mut min_gap = f64::INFINITY;
    for a in 0..centers.len() {
        for b in a + 1..centers.len() {
            min_gap = min_gap.min((&centers[a] - &centers[b]).norm());
        }
    }
    for c in &mut centers {
        *c *= gap / min_gap;
    }
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (k, &s) in sizes.iter().enumerate() {
        let offsets: Vec<Vector> = (0..s)
            .map(|_| {
                let v = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                v.normalize() * (0.5 * rng.random::<f64>())
            })
            .collect();
        for o in offsets {
            rows.push(&centers[k] + o);
            truth.push(k);
        }
    }
    // Interleave clusters so membership is not contiguous.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let rows: Vec<Vector> = order.iter().map(|&i| rows[i].clone()).collect();
    let truth: Vec<usize> = order.iter().map(|&i| truth[i]).collect();
    (PointSet::from_rows(&rows).unwrap(), truth)
}

fn sizes_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(2usize..12, 2..5)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn convex_clustering_recovers_inside_the_a_posteriori_interval(
        sizes in sizes_strategy(),
        d in 1usize..5,
        gap in 2.0f64..40.0,
        seed in any::<u64>(),
    ) {
        let (pts, truth) = instance(seed, &sizes, d, gap);
        let (lo, hi) = recovery_interval(&pts, &truth).unwrap();
        prop_assume!(hi > 1.05 * lo);
        let lambda = 0.5 * (lo + hi);
        let result = convex_cluster(&pts, lambda, DEFAULT_TOL).unwrap();
        prop_assert!(recovery_stats(&result.assignment, &truth).unwrap().exact);
    }

    #[test]
    fn separable_margin_gives_a_nonempty_lambda_range(
        sizes in sizes_strategy(),
        d in 1usize..5,
        seed in any::<u64>(),
    ) {
        let m: usize = sizes.iter().sum();
        let s = *sizes.iter().min().unwrap() as f64;
        let alpha = 4.0 * (m as f64 - s) / s;
        let (pts, truth) = instance(seed, &sizes, d, 1.1 * alpha + 2.0);
        let report = check_separability(&pts, &truth, alpha).unwrap();
        prop_assert!(report.holds);
        let (lo, hi) = lambda_interval(&pts, &truth).unwrap();
        prop_assert!(lo < hi);
    }

    #[test]
    fn kmeans_recovers_well_separated_clusters(
        sizes in sizes_strategy(),
        d in 1usize..6,
        seed in any::<u64>(),
    ) {
        let m: usize = sizes.iter().sum();
        let s = *sizes.iter().min().unwrap() as f64;
        let alpha = 2.0 + 2.0 * (m as f64 / s).sqrt();
        let (pts, truth) = instance(seed, &sizes, d, 1.2 * alpha);
        prop_assert!(check_separability(&pts, &truth, alpha).unwrap().holds);
        let k = sizes.len();
        let spectral = spectral_kmeans(&pts, k, seed).unwrap();
        prop_assert!(recovery_stats(&spectral.assignment, &truth).unwrap().exact);
        let pp = kmeans_pp(&pts, k, 10, seed).unwrap();
        prop_assert!(recovery_stats(&pp.assignment, &truth).unwrap().exact);
    }
}

#[test]
fn recovery_is_invariant_to_user_order() {
    let (pts, truth) = instance(9, &[5, 7, 4], 3, 12.0);
    let m = pts.len();
    let reversed: Vec<Vector> = (0..m).rev().map(|i| pts.row(i)).collect();
    let rev_pts = PointSet::from_rows(&reversed).unwrap();
    let rev_truth: Vec<usize> = truth.iter().rev().copied().collect();
    let (lo, hi) = recovery_interval(&pts, &truth).unwrap();
    let (rlo, rhi) = recovery_interval(&rev_pts, &rev_truth).unwrap();
    assert!((lo - rlo).abs() <= 1e-12 * lo && (hi - rhi).abs() <= 1e-12 * hi);
    let a = convex_cluster(&pts, 0.5 * (lo + hi), DEFAULT_TOL).unwrap();
    let b = convex_cluster(&rev_pts, 0.5 * (lo + hi), DEFAULT_TOL).unwrap();
    let b_back: Vec<usize> = b.assignment.iter().rev().copied().collect();
    assert!(recovery_stats(&a.assignment, &b_back).unwrap().exact);
}
