use odcl::clustering::{canonical_labels, convex_cluster, kmeanspp_init, lloyd, PointSet, DEFAULT_TOL};
use odcl::data::UserShard;
use odcl::erm::{solve_erm_exact, solve_erm_sgd, LossSpec, SgdConfig};
use odcl::eval::{decay_slope, recovery_stats};
use odcl::linalg::{Matrix, Vector};
use proptest::prelude::*;

fn points(max_m: usize, max_d: usize) -> impl Strategy<Value = Matrix> {
    (2..=max_m, 1..=max_d).prop_flat_map(|(m, d)| {
        prop::collection::vec(-50.0f64..50.0, m * d).prop_map(move |v| Matrix::from_row_slice(m, d, &v))
    })
}

fn labels(m: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, m)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn recovery_stats_rows_are_distributions(
        (pred, truth) in (1usize..40).prop_flat_map(|m| (labels(m, 5), labels(m, 4)))
    ) {
        let stats = recovery_stats(&pred, &truth).unwrap();
        let mut used = pred.clone();
        used.sort_unstable();
        used.dedup();
        prop_assert_eq!(stats.k_prime, used.len());
        for (k, row) in stats.overlap.iter().enumerate() {
            let size = pred.iter().filter(|&&p| p == used[k]).count();
            prop_assert_eq!(row.iter().sum::<usize>(), size);
            let total: f64 = stats.eps[k].iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(stats.eps[k].iter().all(|&e| (0.0..=1.0).contains(&e)));
        }
    }

    #[test]
    fn relabeled_prediction_is_still_exact(truth in labels(30, 4), shift in 1usize..4) {
        let pred: Vec<usize> = truth.iter().map(|&t| (t + shift) % 4 + 10).collect();
        prop_assert!(recovery_stats(&pred, &truth).unwrap().exact);
    }

    #[test]
    fn lloyd_objective_never_increases(a in points(30, 4), k in 1usize..5, seed in any::<u64>()) {
        let pts = PointSet::new(a.clone(), (0..a.nrows()).collect()).unwrap();
        let k = k.min(pts.len());
        let init = kmeanspp_init(&pts, k, seed).unwrap();
        let result = lloyd(&pts, &init, 100).unwrap();
        let trace = &result.diagnostics.objective_trace;
        for w in trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
        prop_assert!(result.assignment.iter().all(|&c| c < result.k_prime()));
    }

    #[test]
    fn convex_clustering_returns_a_partition(a in points(12, 3), frac in 1e-4f64..2.0) {
        let pts = PointSet::new(a.clone(), (0..a.nrows()).collect()).unwrap();
        let lambda = frac * pts.diameter().max(1e-6);
        let result = convex_cluster(&pts, lambda, DEFAULT_TOL).unwrap();
        prop_assert_eq!(result.assignment.len(), pts.len());
        prop_assert_eq!(canonical_labels(&result.assignment), result.assignment.clone());
        prop_assert_eq!(result.centroids.len(), result.k_prime());
    }

    #[test]
    fn solvers_stay_in_the_parameter_ball(
        x in prop::collection::vec(-3.0f64..3.0, 20 * 3),
        y in prop::collection::vec(-200.0f64..200.0, 20),
        radius in 0.5f64..20.0,
        seed in any::<u64>(),
    ) {
        let shard = UserShard {
            user_id: 0,
            cluster_id: 0,
            features: Matrix::from_row_slice(20, 3, &x),
            labels: Vector::from_vec(y),
        };
        let loss = LossSpec::quadratic(radius);
        let exact = solve_erm_exact(&loss, &shard).unwrap();
        prop_assert!(exact.params.norm() <= radius * (1.0 + 1e-9));
        let sgd = solve_erm_sgd(&loss, &shard, &SgdConfig { iterations: 200, mu: None, batch_size: 4, seed }).unwrap();
        prop_assert!(sgd.params.norm() <= radius * (1.0 + 1e-9));
    }

    #[test]
    fn decay_slope_recovers_power_laws(p in -3.0f64..1.0, c in 0.1f64..100.0) {
        let pts: Vec<(f64, f64)> = [100.0, 200.0, 400.0, 800.0].iter().map(|&n: &f64| (n, c * n.powf(p))).collect();
        prop_assert!((decay_slope(&pts).unwrap() - p).abs() < 1e-9);
    }
}
