//! End-to-end behaviour of the one-shot pipeline: schedule independence,
//! relabeling of users, consistency of the pooled logistic fit and the
//! inexact variant converging to the exact one.

use odcl::data::{gen_linear_clusters, gen_logistic_clusters, logistic_reference_design, FederatedDataset, GenConfig};
use odcl::erm::{LossSpec, SgdConfig};
use odcl::eval::recovery_stats;
use odcl::protocol::{
    baseline_cluster_oracle, ifca_run, odcl_inexact_run, odcl_run, shell_init, ClusteringAlgo, ErmMode, IfcaConfig,
    IfcaMode, ProtocolConfig, ProtocolOutput,
};

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn kmpp(k: usize, seed: u64) -> ProtocolConfig {
    ProtocolConfig { seed, ..ProtocolConfig::new(ClusteringAlgo::KmeansPp { k, restarts: 10 }) }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let ds = gen_linear_clusters(&GenConfig { test_size: 1, ..GenConfig::ten_cluster_linear(120, 4) }).unwrap();
    let loss = LossSpec::quadratic(1000.0);
    let run = |threads| {
        with_threads(threads, || {
            let km = odcl_run(&ds, &loss, &kmpp(10, 4)).unwrap();
            let cc = odcl_run(&ds, &loss, &ProtocolConfig { seed: 4, ..ProtocolConfig::new(ClusteringAlgo::ConvexTruthInterval) })
                .unwrap();
            let ifca_cfg = IfcaConfig {
                step: 0.05,
                rounds: 10,
                mode: IfcaMode::ModelAvg { local_steps: 5, batch: Some(1) },
                seed: 4,
            };
            let init = shell_init(ds.true_models.as_ref().unwrap(), 4).unwrap();
            let ifca = ifca_run(&ds, &loss, &init, &ifca_cfg).unwrap();
            (km.per_user_models, cc.per_user_models, ifca.per_user_models)
        })
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}

fn permuted(ds: &FederatedDataset, order: &[usize]) -> FederatedDataset {
    let mut out = ds.clone();
    out.shards = order.iter().map(|&i| ds.shards[i].clone()).collect();
    out.true_assignment = order.iter().map(|&i| ds.true_assignment[i]).collect();
    for (new_id, shard) in out.shards.iter_mut().enumerate() {
        shard.user_id = new_id;
    }
    out.validate().unwrap();
    out
}

#[test]
fn relabeling_users_permutes_the_output() {
    let ds = gen_linear_clusters(&GenConfig { test_size: 1, ..GenConfig::ten_cluster_linear(400, 8) }).unwrap();
    let loss = LossSpec::quadratic(1000.0);
    let m = ds.num_users();
    let order: Vec<usize> = (0..m).map(|i| (i * 37 + 11) % m).collect();
    let shuffled = permuted(&ds, &order);
    let check = |a: &ProtocolOutput, b: &ProtocolOutput| {
        for (new, &old) in order.iter().enumerate() {
            let diff = (&b.per_user_models[new] - &a.per_user_models[old]).norm();
            assert!(diff <= 1e-10 * a.per_user_models[old].norm(), "user {old}: {diff}");
        }
    };
    check(&odcl_run(&ds, &loss, &kmpp(10, 1)).unwrap(), &odcl_run(&shuffled, &loss, &kmpp(10, 1)).unwrap());
    check(&baseline_cluster_oracle(&ds, &loss).unwrap(), &baseline_cluster_oracle(&shuffled, &loss).unwrap());
}

#[test]
fn pooled_logistic_fit_is_consistent() {
    // 25 users per cluster with 4000 samples each: 10^5 samples per cluster.
    let design = logistic_reference_design(4000, 21);
    let ds = gen_logistic_clusters(&design.config, &design.covariances, &design.centers).unwrap();
    let loss = LossSpec::logistic(1e-5, 100.0);
    let out = baseline_cluster_oracle(&ds, &loss).unwrap();
    let truth = ds.true_models.as_ref().unwrap();
    for (k, users) in ds.true_clusters().iter().enumerate() {
        let model = &out.per_user_models[users[0]];
        let weights = model.rows(0, 2).into_owned();
        let err = ((&weights - &truth[k]).norm_squared() + model[2] * model[2]).sqrt();
        assert!(err <= 0.1, "cluster {k}: error {err}");
    }
}

#[test]
fn long_sgd_runs_reproduce_the_exact_protocol() {
    let base = GenConfig::four_cluster_linear(20, 3);
    let ds = gen_linear_clusters(&GenConfig { m: 8, d: 3, feature_sparsity: None, test_size: 1, ..base }).unwrap();
    let loss = LossSpec::quadratic(100.0);
    let exact = odcl_run(&ds, &loss, &kmpp(4, 3)).unwrap();
    let sgd = SgdConfig { iterations: 100_000, mu: None, batch_size: 1, seed: 3 };
    let inexact = odcl_inexact_run(&ds, &loss, &ProtocolConfig { erm: ErmMode::Sgd { sgd }, diagnostic: true, ..kmpp(4, 3) }).unwrap();
    assert!(recovery_stats(&inexact.server_clustering.assignment, &exact.server_clustering.assignment).unwrap().exact);
    for (a, b) in inexact.per_user_models.iter().zip(&exact.per_user_models) {
        assert!((a - b).norm() <= 1e-2, "{}", (a - b).norm());
    }
    assert!(inexact.eps_hat.unwrap() <= 1e-1);
    assert_eq!(inexact.comm_rounds, 1);

    let one_step = SgdConfig { iterations: 1, ..sgd };
    let rough = odcl_inexact_run(&ds, &loss, &ProtocolConfig { erm: ErmMode::Sgd { sgd: one_step }, ..kmpp(4, 3) }).unwrap();
    assert_eq!(rough.per_user_models.len(), ds.num_users());
    assert!(rough.per_user_models.iter().all(|m| m.iter().all(|v| v.is_finite())));
}
