use batchpomdp::evaluator::RolloutConfig;
use batchpomdp::harness::{run_bounds_report, run_sweep, ExperimentConfig, Sweep};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        experiment_id: "det".into(),
        n_pomdps: 3,
        n_tr: vec![2, 20],
        mappings: vec!["phi_h:1".into(), "phi_h:2".into()],
        gamma_train: vec![0.9],
        n_datasets: 4,
        rollout: RolloutConfig {
            n_rollouts: 50,
            horizon: 15,
            ..RolloutConfig::default()
        },
        seed: 17,
        ..ExperimentConfig::default()
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn sweep_hash_does_not_depend_on_pool_width() {
    let cfg = small();
    let a = in_pool(1, || run_sweep(&cfg).unwrap());
    let b = in_pool(3, || run_sweep(&cfg).unwrap());
    assert_eq!(a.determinism_hash().unwrap(), b.determinism_hash().unwrap());
    let cells = 3 * 2 * 2;
    let aggregates = 2 * 2;
    assert_eq!(a.rows.len(), cells + aggregates);
    assert!(a.rows.iter().all(|r| r.error.is_empty()));
}

#[test]
fn csv_round_trip_keeps_the_hash() {
    let sweep = run_sweep(&small()).unwrap();
    let csv = sweep.to_csv().unwrap();
    let back = Sweep {
        rows: Sweep::read_csv(&csv).unwrap(),
        returns: Vec::new(),
    };
    assert_eq!(
        back.determinism_hash().unwrap(),
        sweep.determinism_hash().unwrap()
    );
}

#[test]
fn different_master_seeds_differ() {
    let a = run_sweep(&small()).unwrap();
    let b = run_sweep(&ExperimentConfig {
        seed: 18,
        ..small()
    })
    .unwrap();
    assert_ne!(a.determinism_hash().unwrap(), b.determinism_hash().unwrap());
}

#[test]
fn bounds_report_is_reproducible() {
    let cfg = ExperimentConfig {
        n_pomdps: 2,
        n_tr: vec![5],
        bounds_horizon: 2,
        ..small()
    };
    let a = in_pool(1, || run_bounds_report(&cfg).unwrap());
    let b = in_pool(4, || run_bounds_report(&cfg).unwrap());
    assert_eq!(a.to_json(), b.to_json());
    assert!(a.bias.passed() && a.overfitting.passed());
}
