mod common;

use batchpomdp::evaluator::{exact_value, model_value, RolloutConfig, Simulator};
use batchpomdp::mapping::HistoryMapping;
use batchpomdp::propagate::SuccessorTable;
use batchpomdp::{fixture, phi_full, phi_h, AugmentedMdp, SamplingPolicy, TabularPolicy};
use common::{brute_value, random_pomdp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_policy(rng: &mut ChaCha8Rng, m: &dyn HistoryMapping) -> TabularPolicy {
    TabularPolicy {
        mapping: m.descriptor(),
        actions: (0..m.cardinality())
            .map(|_| rng.gen_range(0..m.n_actions()))
            .collect(),
    }
}

#[test]
fn exact_value_matches_exhaustive_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..8 {
        let p = random_pomdp(seed, 4, 2, 3);
        for m in [
            phi_h(1, 3, 2).unwrap(),
            phi_h(2, 3, 2).unwrap(),
            phi_full(3, 3, 2).unwrap(),
        ] {
            let pol = random_policy(&mut rng, &m);
            for (h, d) in [(4, 1.0), (5, 0.9)] {
                let got = exact_value(&p, p.init(), &m, &pol, h, d).unwrap();
                let want = brute_value(&p, p.init(), &m, &pol.actions, h, d);
                assert!((got - want).abs() < 1e-10, "{got} vs {want}");
            }
        }
    }
}

#[test]
fn chain_fixture_alternating_policy_earns_half_per_step() {
    let p = fixture("chain2").unwrap();
    let m = phi_h(1, 2, 2).unwrap();
    let pol = TabularPolicy {
        mapping: m.descriptor(),
        actions: vec![0, 0],
    };
    let v = exact_value(&p, p.init(), &m, &pol, 100, 1.0).unwrap();
    assert!((v - 50.0).abs() < 1e-12);
}

#[test]
fn rollouts_agree_with_the_exact_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..5 {
        let p = random_pomdp(seed + 100, 5, 2, 5);
        let m = phi_h(2, 5, 2).unwrap();
        let pol = random_policy(&mut rng, &m);
        let cfg = RolloutConfig {
            n_rollouts: 4000,
            horizon: 20,
            discount_env: 1.0,
            seed: 0,
        };
        let table = SuccessorTable::new(&m);
        let sim = Simulator::new(&p, p.init(), &m, &table).unwrap();
        let (mean, se) = sim.value(&pol.actions, &cfg, seed);
        let exact = exact_value(&p, p.init(), &m, &pol, 20, 1.0).unwrap();
        assert!(
            (mean - exact).abs() < 4.0 * se + 1e-9,
            "{mean} ± {se} vs {exact}"
        );
    }
}

#[test]
fn rollouts_share_streams_across_policies() {
    let p = random_pomdp(1, 5, 2, 5);
    let m = phi_h(1, 5, 2).unwrap();
    let table = SuccessorTable::new(&m);
    let sim = Simulator::new(&p, p.init(), &m, &table).unwrap();
    let cfg = RolloutConfig {
        n_rollouts: 50,
        horizon: 10,
        ..RolloutConfig::default()
    };
    let a = sim.returns(&[0; 5], &cfg, 3);
    assert_eq!(a, sim.returns(&[0; 5], &cfg, 3));
    assert_ne!(a, sim.returns(&[0; 5], &cfg, 4));
}

#[test]
fn long_model_value_converges_to_policy_evaluation() {
    let p = random_pomdp(2, 4, 2, 4);
    let m = phi_h(2, 4, 2).unwrap();
    let mdp =
        AugmentedMdp::fit_asymptotic(&p, p.init(), &SamplingPolicy::Uniform, &m, 6, 0.8).unwrap();
    let pol = mdp.solve(1e-10).unwrap().policy;
    let v = mdp.policy_evaluation(&pol).unwrap();
    let want = mdp.initial_value(&v);
    let got = model_value(&mdp, &pol.actions, 200, 0.8);
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}
