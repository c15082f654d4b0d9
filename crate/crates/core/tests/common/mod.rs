//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use batchpomdp::mapping::HistoryMapping;
use batchpomdp::mdp::AugmentedMdp;
use batchpomdp::theory::MetricMatrix;
use batchpomdp::{generator, GeneratorConfig, History, InitialDistribution, Pomdp};
use nalgebra::{DMatrix, DVector};

pub fn random_pomdp(seed: u64, ns: usize, na: usize, no: usize) -> Pomdp {
    generator::generate(&GeneratorConfig {
        seed,
        ..GeneratorConfig::sized(ns, na, no)
    })
    .unwrap()
}

/// Every action-observation history of length `0..=max_len` (zero rewards).
pub fn all_histories(n_obs: usize, n_actions: usize, max_len: usize) -> Vec<History> {
    let mut out: Vec<History> = (0..n_obs).map(History::new).collect();
    let mut frontier = out.clone();
    for _ in 0..max_len {
        let mut next = Vec::new();
        for h in &frontier {
            for a in 0..n_actions {
                for w in 0..n_obs {
                    next.push(h.extended(a, 0.0, w));
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Posterior of the last state by summing the joint over every hidden
/// state sequence. `None` when the history has probability zero.
pub fn brute_belief(p: &Pomdp, init: &InitialDistribution, h: &History) -> Option<Vec<f64>> {
    let ns = p.n_states();
    let t = h.steps.len();
    let mut post = vec![0.0; ns];
    let mut seq = vec![0usize; t + 1];
    let total = ns.pow(t as u32 + 1);
    for code in 0..total {
        let mut c = code;
        for x in seq.iter_mut() {
            *x = c % ns;
            c /= ns;
        }
        let mut w = init.probs()[seq[0]] * p.o(seq[0], h.initial_obs);
        for (k, st) in h.steps.iter().enumerate() {
            if w == 0.0 {
                break;
            }
            w *= p.t(seq[k], st.action, seq[k + 1]) * p.o(seq[k + 1], st.obs);
        }
        post[seq[t]] += w;
    }
    let z: f64 = post.iter().sum();
    if z == 0.0 {
        return None;
    }
    Some(post.into_iter().map(|x| x / z).collect())
}

/// Expected return of a policy over `Σ` by exhaustive recursion over
/// hidden transitions and observations.
pub fn brute_value(
    p: &Pomdp,
    init: &InitialDistribution,
    m: &dyn HistoryMapping,
    actions: &[usize],
    horizon: usize,
    discount: f64,
) -> f64 {
    fn go(
        p: &Pomdp,
        m: &dyn HistoryMapping,
        actions: &[usize],
        s: usize,
        sigma: usize,
        left: usize,
        discount: f64,
    ) -> f64 {
        if left == 0 {
            return 0.0;
        }
        let a = actions[sigma];
        let mut v = 0.0;
        for s2 in 0..p.n_states() {
            let pt = p.t(s, a, s2);
            if pt == 0.0 {
                continue;
            }
            let r = p.r(s, a, s2);
            for w in 0..p.n_obs() {
                let po = p.o(s2, w);
                if po == 0.0 {
                    continue;
                }
                let next = m.advance(sigma, a, r, w);
                v += pt * po * (r + discount * go(p, m, actions, s2, next, left - 1, discount));
            }
        }
        v
    }
    let mut v = 0.0;
    for s in 0..p.n_states() {
        for w in 0..p.n_obs() {
            let q = init.probs()[s] * p.o(s, w);
            if q > 0.0 {
                v += q * go(p, m, actions, s, m.initial(w), horizon, discount);
            }
        }
    }
    v
}

/// `V^π = (I − Γ P^π)^{-1} R^π` by a dense LU solve.
pub fn linear_policy_value(mdp: &AugmentedMdp, actions: &[usize]) -> Vec<f64> {
    let n = mdp.n_sigma();
    let g = mdp.gamma();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        let row = mdp.t_row_dense(s, actions[s]);
        for (j, &p) in row.iter().enumerate() {
            a[(s, j)] -= g * p;
        }
        b[s] = mdp.expected_reward(s, actions[s]);
    }
    a.lu().solve(&b).unwrap().iter().copied().collect()
}

/// Every deterministic policy over `n` states and `na` actions.
pub fn all_policies(n: usize, na: usize) -> Vec<Vec<usize>> {
    let total = na.pow(n as u32);
    (0..total)
        .map(|mut c| {
            (0..n)
                .map(|_| {
                    let a = c % na;
                    c /= na;
                    a
                })
                .collect()
        })
        .collect()
}

/// Optimal transport by enumerating the basic feasible solutions of the
/// transportation polytope: spanning trees of the bipartite support graph,
/// whose flows are fixed by peeling leaves.
pub fn vertex_ot(d: &MetricMatrix, p: &[f64], q: &[f64]) -> f64 {
    let src: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    let dst: Vec<usize> = (0..q.len()).filter(|&j| q[j] > 0.0).collect();
    let (m, k) = (src.len(), dst.len());
    let edges: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
    let need = m + k - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(need);
    fn rec(
        start: usize,
        need: usize,
        edges: &[(usize, usize)],
        chosen: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize]),
    ) {
        if chosen.len() == need {
            f(chosen);
            return;
        }
        for e in start..edges.len() {
            if edges.len() - e < need - chosen.len() {
                break;
            }
            chosen.push(e);
            rec(e + 1, need, edges, chosen, f);
            chosen.pop();
        }
    }
    let mut eval = |sel: &[usize]| {
        let mut sup: Vec<f64> = src.iter().map(|&i| p[i]).collect();
        let mut dem: Vec<f64> = dst.iter().map(|&j| q[j]).collect();
        let mut alive: Vec<bool> = vec![true; sel.len()];
        let mut cost = 0.0;
        for _ in 0..sel.len() {
            // Find a leaf: a node with exactly one alive edge.
            let mut found = None;
            'search: for node in 0..m + k {
                let inc: Vec<usize> = (0..sel.len())
                    .filter(|&x| {
                        alive[x] && {
                            let (i, j) = edges[sel[x]];
                            if node < m {
                                i == node
                            } else {
                                j == node - m
                            }
                        }
                    })
                    .collect();
                if inc.len() == 1 {
                    found = Some((node, inc[0]));
                    break 'search;
                }
            }
            let Some((node, x)) = found else { return };
            let (i, j) = edges[sel[x]];
            let f = if node < m { sup[i] } else { dem[j] };
            if f < -1e-12 {
                return;
            }
            sup[i] -= f;
            dem[j] -= f;
            cost += f * d.get(src[i], dst[j]);
            alive[x] = false;
        }
        if sup.iter().chain(&dem).all(|x| x.abs() < 1e-9) {
            best = best.min(cost);
        }
    };
    rec(0, need, &edges, &mut chosen, &mut eval);
    best
}

/// Optimal transport between two lists of equally weighted atoms, by
/// trying every assignment.
pub fn permutation_ot(d: &MetricMatrix, a: &[usize], b: &[usize]) -> f64 {
    fn heap(k: usize, perm: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if k == 1 {
            f(perm);
            return;
        }
        heap(k - 1, perm, f);
        for i in 0..k - 1 {
            if k.is_multiple_of(2) {
                perm.swap(i, k - 1);
            } else {
                perm.swap(0, k - 1);
            }
            heap(k - 1, perm, f);
        }
    }
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    heap(n, &mut perm, &mut |pm| {
        let c: f64 = (0..n).map(|i| d.get(a[i], b[pm[i]])).sum();
        best = best.min(c);
    });
    best / n as f64
}

/// Random metric from points in the plane.
pub fn euclidean_metric(points: &[(f64, f64)]) -> MetricMatrix {
    let rows = points
        .iter()
        .map(|a| {
            points
                .iter()
                .map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
                .collect()
        })
        .collect();
    MetricMatrix::from_rows(rows).unwrap()
}
