mod common;

use batchpomdp::mapping::HistoryMapping;
use batchpomdp::theory::{
    asymptotic_state_occupancy, bias_bound, bisim_run, epsilon_sufficiency, hoeffding_deviation,
    kantorovich, kantorovich_plan, lookahead_q, overfitting_bound, verify_bellman_residual,
    verify_lemma_l1, verify_lemma_qmetric, verify_proposition1, BisimConfig, MetricMatrix,
    DEFAULT_PRUNE_MASS,
};
use batchpomdp::{fixture, phi_full, phi_h, AugmentedMdp, SamplingPolicy, TabularPolicy};
use common::{all_histories, euclidean_metric, permutation_ot, random_pomdp, vertex_ot};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|_| (rng.gen(), rng.gen())).collect()
}

fn sparse_dist(rng: &mut ChaCha8Rng, n: usize, support: &[usize]) -> Vec<f64> {
    let mut p = vec![0.0; n];
    for &i in support {
        p[i] = rng.gen::<f64>() + 0.05;
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

#[test]
fn kantorovich_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..300 {
        let n = rng.gen_range(2..=6);
        let d = euclidean_metric(&random_points(&mut rng, n));
        let ks = rng.gen_range(1..=n.min(4));
        let kt = rng.gen_range(1..=n.min(3));
        let mut idx: Vec<usize> = (0..n).collect();
        let sp: Vec<usize> = (0..ks)
            .map(|_| idx.swap_remove(rng.gen_range(0..idx.len())))
            .collect();
        let mut idx: Vec<usize> = (0..n).collect();
        let sq: Vec<usize> = (0..kt)
            .map(|_| idx.swap_remove(rng.gen_range(0..idx.len())))
            .collect();
        let p = sparse_dist(&mut rng, n, &sp);
        let q = sparse_dist(&mut rng, n, &sq);
        let got = kantorovich(&d, &p, &q).unwrap();
        let want = vertex_ot(&d, &p, &q);
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }
}

#[test]
fn kantorovich_matches_assignment_on_dyadic_masses() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..40 {
        let d = euclidean_metric(&random_points(&mut rng, 6));
        let a: Vec<usize> = (0..8).map(|_| rng.gen_range(0..6)).collect();
        let b: Vec<usize> = (0..8).map(|_| rng.gen_range(0..6)).collect();
        let mass = |atoms: &[usize]| {
            let mut m = vec![0.0; 6];
            atoms.iter().for_each(|&i| m[i] += 0.125);
            m
        };
        let got = kantorovich(&d, &mass(&a), &mass(&b)).unwrap();
        assert!((got - permutation_ot(&d, &a, &b)).abs() < 1e-8);
    }
}

#[test]
fn kantorovich_lies_between_scaled_total_variation_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..200 {
        let n = rng.gen_range(2..12);
        let d = euclidean_metric(&random_points(&mut rng, n));
        let all: Vec<usize> = (0..n).collect();
        let p = sparse_dist(&mut rng, n, &all);
        let q = sparse_dist(&mut rng, n, &all);
        let tv = 0.5 * p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>();
        let mut dmin = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    dmin = dmin.min(d.get(i, j));
                }
            }
        }
        let w = kantorovich(&d, &p, &q).unwrap();
        assert!(w <= d.max() * tv + 1e-12);
        assert!(w >= dmin * tv - 1e-12);
        let (cost, plan) = kantorovich_plan(&d, &p, &q).unwrap();
        assert!((cost - w).abs() < 1e-12);
        let mut rows = vec![0.0; n];
        let mut cols = vec![0.0; n];
        for &(i, j, m) in &plan {
            assert!(m >= 0.0);
            rows[i] += m;
            cols[j] += m;
        }
        for i in 0..n {
            assert!((rows[i] - p[i]).abs() < 1e-12 && (cols[i] - q[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn closed_form_bounds() {
    let of = overfitting_bound(100, 1.0, 0.95, 5, 2, 0.05).unwrap();
    #[allow(clippy::excessive_precision)]
    let reference = 173.962_758_772_401_247_835_06;
    assert!((of - reference).abs() / reference < 1e-12, "{of}");
    assert!((bias_bound(0.1, 2.0, 0.9).unwrap() - 0.4 / 1e-3).abs() < 1e-6);
    let t = hoeffding_deviation(50, 20.0, 5, 2, 0.05).unwrap();
    let want = 20.0 * ((2.0f64 * 5.0 * 2f64.powi(6) / 0.05).ln() / 100.0).sqrt();
    assert!((t - want).abs() < 1e-12);
    assert!(overfitting_bound(100, 1.0, 0.95, 5, 2, 1.0).is_err());
}

#[test]
fn refining_the_window_cannot_hurt_without_informative_observations() {
    let p = fixture("uninformative_obs").unwrap();
    let eps = |h: usize| {
        epsilon_sufficiency(
            &p,
            p.init(),
            &SamplingPolicy::Uniform,
            &phi_h(h, 2, 2).unwrap(),
            4,
            DEFAULT_PRUNE_MASS,
        )
        .unwrap()
        .epsilon
    };
    let (e1, e2, e3) = (eps(1), eps(2), eps(3));
    assert!(e1 > 0.0);
    assert!(e2 <= e1 + 1e-12 && e3 <= e2 + 1e-12, "{e1} {e2} {e3}");
}

#[test]
fn lookahead_matches_backward_induction_on_the_full_history_model() {
    let (h, l, g) = (2, 2, 0.9);
    for seed in 0..4 {
        let p = random_pomdp(seed, 3, 2, 2);
        let m = phi_full(h + l, 2, 2).unwrap();
        let mdp =
            AugmentedMdp::fit_asymptotic(&p, p.init(), &SamplingPolicy::Uniform, &m, h + l, g)
                .unwrap();
        let mut v = vec![0.0; m.cardinality()];
        let mut q = mdp.backup_all(&v);
        for _ in 0..l {
            q = mdp.backup_all(&v);
            v = q.values().0;
        }
        let mut compared = 0;
        for hist in all_histories(2, 2, h) {
            let Ok(b) = p.belief_of_history(p.init(), &hist) else {
                continue;
            };
            let sigma = m.apply_index(&hist);
            let want = lookahead_q(&p, b.probs(), l, g);
            for a in 0..2 {
                assert!((q.get(sigma, a) - want[a]).abs() < 1e-10);
            }
            compared += 1;
        }
        assert!(compared > 4);
    }
}

#[test]
fn occupancy_reproduces_the_asymptotic_backup() {
    let p = random_pomdp(6, 4, 2, 3);
    let m = phi_h(2, 3, 2).unwrap();
    let (n_l, g) = (5, 0.9);
    let mdp =
        AugmentedMdp::fit_asymptotic(&p, p.init(), &SamplingPolicy::Uniform, &m, n_l, g).unwrap();
    let v = mdp.solve(1e-10).unwrap().v.0;
    let q = mdp.backup_all(&v);
    let occ = asymptotic_state_occupancy(&p, p.init(), &SamplingPolicy::Uniform, &m, n_l).unwrap();
    let ns = p.n_states();
    for sg in 0..m.cardinality() {
        let row = &occ[sg * ns..(sg + 1) * ns];
        if row.iter().all(|&x| x == 0.0) {
            continue;
        }
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for a in 0..2 {
            let mut want = 0.0;
            for s in 0..ns {
                for s2 in 0..ns {
                    let r = p.r(s, a, s2);
                    for w in 0..p.n_obs() {
                        want += row[s]
                            * p.t(s, a, s2)
                            * p.o(s2, w)
                            * (r + g * v[m.advance(sg, a, r, w)]);
                    }
                }
            }
            assert!((q.get(sg, a) - want).abs() < 1e-10);
        }
    }
}

#[test]
fn cluster_checks_pass_on_random_models() {
    for seed in 0..3 {
        let p = random_pomdp(seed, 4, 2, 4);
        for h in [1, 2] {
            let m = phi_h(h, 4, 2).unwrap();
            let prop = verify_proposition1(&p, p.init(), &m, 2, 0.9).unwrap();
            assert!(prop.instances > 0 && prop.passed(), "{prop:?}");
            let lemma = verify_lemma_l1(&p, p.init(), &m, 2).unwrap();
            assert!(lemma.passed(), "{lemma:?}");
        }
    }
}

fn random_model(rng: &mut ChaCha8Rng, n: usize, na: usize, g: f64) -> AugmentedMdp {
    let mut t = Vec::new();
    for _ in 0..n * na {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(3)).collect();
        let s: f64 = raw.iter().sum();
        t.extend(raw.iter().map(|x| x / s));
    }
    let r: Vec<f64> = (0..n * na * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    AugmentedMdp::from_dense(n, na, &t, &r, g).unwrap()
}

#[test]
fn perturbed_models_respect_the_residual_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..30 {
        let n = rng.gen_range(2..7);
        let truth = random_model(&mut rng, n, 2, 0.9);
        let est = random_model(&mut rng, n, 2, 0.9);
        let pol = TabularPolicy {
            mapping: "dense".into(),
            actions: (0..n).map(|_| rng.gen_range(0..2)).collect(),
        };
        assert!(verify_bellman_residual(&truth, &est, &pol)
            .unwrap()
            .passed());
    }
}

#[test]
fn bisimulation_fixed_point_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let cfg = BisimConfig {
        c_r: 0.1,
        c_t: 0.9,
        ..BisimConfig::default()
    };
    for _ in 0..10 {
        let n = rng.gen_range(2..8);
        let mdp = random_model(&mut rng, n, 2, 0.9);
        let run = bisim_run(&mdp, &cfg).unwrap();
        assert!(run.monotone);
        assert!(run.max_contraction_ratio(1e-9) <= cfg.c_t + 1e-9);
        let d = &run.metric;
        for i in 0..n {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..n {
                assert_eq!(d.get(i, j), d.get(j, i));
                let f = (0..2)
                    .map(|a| {
                        cfg.c_r * (mdp.expected_reward(i, a) - mdp.expected_reward(j, a)).abs()
                            + cfg.c_t
                                * kantorovich(d, &mdp.t_row_dense(i, a), &mdp.t_row_dense(j, a))
                                    .unwrap()
                    })
                    .fold(0.0, f64::max);
                if i != j {
                    assert!((f - d.get(i, j)).abs() < 1e-8, "{f} vs {}", d.get(i, j));
                }
                for k in 0..n {
                    assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-9);
                }
            }
        }
        assert!(verify_lemma_qmetric(&mdp, &cfg).unwrap().passed());
    }
}

#[test]
fn metric_rejects_mismatched_sizes() {
    let d = MetricMatrix::zeros(3);
    assert!(kantorovich(&d, &[1.0, 0.0], &[0.0, 1.0]).is_err());
}
