mod common;

use std::collections::HashMap;

use batchpomdp::dataset::sample_dataset_seeded;
use batchpomdp::mapping::HistoryMapping;
use batchpomdp::{phi_h, AugmentedMdp, Dataset, SamplingPolicy, TabularPolicy, Trajectory};
use common::{all_policies, linear_policy_value, random_pomdp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dense(rng: &mut ChaCha8Rng, n: usize, na: usize) -> (Vec<f64>, Vec<f64>) {
    let mut t = Vec::with_capacity(n * na * n);
    for _ in 0..n * na {
        let raw: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.4) { 0.0 } else { rng.gen() })
            .collect();
        let s: f64 = raw.iter().sum();
        if s == 0.0 {
            let mut row = vec![0.0; n];
            row[rng.gen_range(0..n)] = 1.0;
            t.extend(row);
        } else {
            t.extend(raw.iter().map(|x| x / s));
        }
    }
    let r = (0..n * na * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (t, r)
}

#[test]
fn fit_matches_hand_counts() {
    let p = random_pomdp(3, 4, 2, 3);
    let ds = sample_dataset_seeded(&p, p.init(), &SamplingPolicy::Uniform, 40, 6, 11).unwrap();
    let m = phi_h(2, 3, 2).unwrap();
    let mdp = AugmentedMdp::fit(&ds, &m, 0.9).unwrap();

    let mut counts: HashMap<(usize, usize, usize), (f64, f64)> = HashMap::new();
    let mut pair: HashMap<(usize, usize), f64> = HashMap::new();
    let (mut reward_sum, mut steps) = (0.0, 0.0);
    for t in &ds.trajectories {
        for k in 0..t.len() {
            let s = m.apply_index(&t.history(k));
            let s2 = m.apply_index(&t.history(k + 1));
            let e = counts.entry((s, t.actions[k], s2)).or_default();
            e.0 += 1.0;
            e.1 += t.rewards[k];
            *pair.entry((s, t.actions[k])).or_default() += 1.0;
            reward_sum += t.rewards[k];
            steps += 1.0;
        }
    }
    let fallback = reward_sum / steps;
    assert!((mdp.fallback_reward() - fallback).abs() < 1e-12);
    for s in 0..m.cardinality() {
        for a in 0..2 {
            let n_sa = pair.get(&(s, a)).copied();
            assert_eq!(mdp.is_observed(s, a), n_sa.is_some());
            for s2 in 0..m.cardinality() {
                let (want_t, want_r) = match (n_sa, counts.get(&(s, a, s2))) {
                    (None, _) => (1.0 / m.cardinality() as f64, fallback),
                    (Some(_), None) => (0.0, fallback),
                    (Some(n), Some(&(c, rs))) => (c / n, rs / c),
                };
                assert!((mdp.t_hat(s, a, s2) - want_t).abs() < 1e-12);
                assert!((mdp.r_hat(s, a, s2) - want_r).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn single_trajectory_fit() {
    let m = phi_h(1, 2, 2).unwrap();
    let t = Trajectory {
        initial_obs: 0,
        actions: vec![1, 1, 0],
        rewards: vec![1.0, 0.0, -1.0],
        obs: vec![1, 0, 0],
    };
    let mdp = AugmentedMdp::fit(&Dataset::new(vec![t]), &m, 0.5).unwrap();
    let (s0, s1) = (m.initial(0), m.initial(1));
    assert_eq!(mdp.t_hat(s0, 1, s1), 1.0);
    assert_eq!(mdp.r_hat(s0, 1, s1), 1.0);
    assert_eq!(mdp.t_hat(s0, 0, s0), 1.0);
    assert_eq!(mdp.r_hat(s0, 0, s0), -1.0);
    assert_eq!(mdp.t_hat(s1, 1, s0), 1.0);
    assert!(!mdp.is_observed(s1, 0));
    assert_eq!(mdp.t_hat(s1, 0, s1), 0.5);
    assert_eq!(mdp.r_hat(s1, 0, s1), 0.0);
}

#[test]
fn large_sample_fit_approaches_the_asymptotic_model() {
    let p = random_pomdp(5, 4, 2, 4);
    let m = phi_h(2, 4, 2).unwrap();
    let n_l = 8;
    let ds = sample_dataset_seeded(&p, p.init(), &SamplingPolicy::Uniform, 30_000, n_l, 5).unwrap();
    let fit = AugmentedMdp::fit(&ds, &m, 0.9).unwrap();
    let asym =
        AugmentedMdp::fit_asymptotic(&p, p.init(), &SamplingPolicy::Uniform, &m, n_l, 0.9).unwrap();
    let mut checked = 0;
    for s in 0..m.cardinality() {
        for a in 0..2 {
            if asym.occupancy(s, a) < 1e-2 {
                continue;
            }
            checked += 1;
            let (x, y) = (fit.t_row_dense(s, a), asym.t_row_dense(s, a));
            let gap = x
                .iter()
                .zip(&y)
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max);
            assert!(gap < 0.05, "row ({s},{a}) gap {gap}");
        }
    }
    assert!(checked > 5);
}

#[test]
fn json_round_trip_preserves_the_model() {
    let p = random_pomdp(8, 3, 2, 3);
    let ds = sample_dataset_seeded(&p, p.init(), &SamplingPolicy::Uniform, 20, 5, 2).unwrap();
    let m = phi_h(2, 3, 2).unwrap();
    let mdp = AugmentedMdp::fit(&ds, &m, 0.8).unwrap();
    let back = AugmentedMdp::from_json(&mdp.to_json()).unwrap();
    for s in 0..m.cardinality() {
        for a in 0..2 {
            assert_eq!(mdp.t_row_dense(s, a), back.t_row_dense(s, a));
            assert_eq!(mdp.expected_reward(s, a), back.expected_reward(s, a));
        }
    }
}

#[test]
fn policy_evaluation_matches_linear_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let n = rng.gen_range(2..9);
        let na = rng.gen_range(1..4);
        let (t, r) = random_dense(&mut rng, n, na);
        let g = [0.5, 0.9, 0.99][rng.gen_range(0..3)];
        let mdp = AugmentedMdp::from_dense(n, na, &t, &r, g).unwrap();
        let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..na)).collect();
        let want = linear_policy_value(&mdp, &actions);
        let got = mdp
            .policy_evaluation(&TabularPolicy {
                mapping: "dense".into(),
                actions,
            })
            .unwrap();
        for (x, y) in got.0.iter().zip(&want) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn value_iteration_finds_the_best_deterministic_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let n = rng.gen_range(2..6);
        let na = rng.gen_range(2..4);
        let (t, r) = random_dense(&mut rng, n, na);
        let mdp = AugmentedMdp::from_dense(n, na, &t, &r, 0.9).unwrap();
        let sol = mdp.solve(1e-10).unwrap();
        let mine = linear_policy_value(&mdp, &sol.policy.actions);
        for pol in all_policies(n, na) {
            let other = linear_policy_value(&mdp, &pol);
            for s in 0..n {
                assert!(other[s] <= mine[s] + 1e-8);
            }
        }
        for s in 0..n {
            assert!((sol.v.0[s] - mine[s]).abs() < 1e-8);
        }
    }
}

#[test]
fn self_loop_value_is_the_geometric_sum() {
    for g in [0.5, 0.95, 0.98] {
        let mdp = AugmentedMdp::from_dense(1, 1, &[1.0], &[1.0], g).unwrap();
        let v = mdp.solve(1e-11).unwrap().v.0[0];
        assert!((v - 1.0 / (1.0 - g)).abs() < 1e-8, "{g}: {v}");
    }
}

#[test]
fn ties_break_to_the_lowest_action() {
    let t = vec![1.0, 1.0, 1.0];
    let r = vec![0.5, 0.5, 0.5];
    let mdp = AugmentedMdp::from_dense(1, 3, &t, &r, 0.9).unwrap();
    assert_eq!(mdp.solve(1e-10).unwrap().policy.actions, vec![0]);
}
