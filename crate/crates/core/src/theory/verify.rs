use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bisim::{bisim_run, BisimConfig};
use super::bounds::hoeffding_deviation;
use super::epsilon::{enumerate_histories, epsilon_from_nodes, HistorySet};
use super::{CheckReport, DEFAULT_HISTORY_CAP, DEFAULT_PRUNE_MASS};
use crate::dataset::SamplingPolicy;
use crate::error::{Error, Result};
use crate::mapping::HistoryMapping;
use crate::mdp::{AugmentedMdp, TabularPolicy};
use crate::pomdp::{l1, sample_categorical, InitialDistribution, Pomdp};
use crate::propagate::{ActionRule, Collect, Propagator};
use crate::seed::{derived_rng, tag};

const PROP1_TOL: f64 = 1e-8;
const L1_TOL: f64 = 1e-9;
const QMETRIC_TOL: f64 = 1e-8;
const RESIDUAL_TOL: f64 = 1e-8;

/// `Q_L(b, ·)`: optimal expected discounted sum of the next `depth` rewards
/// from belief `b`, by exhaustive lookahead over action-observation branches.
pub fn lookahead_q(pomdp: &Pomdp, belief: &[f64], depth: usize, gamma: f64) -> Vec<f64> {
    let na = pomdp.n_actions();
    if depth == 0 {
        return vec![0.0; na];
    }
    (0..na)
        .map(|a| {
            let mut q: f64 = belief
                .iter()
                .enumerate()
                .filter(|(_, &b)| b != 0.0)
                .map(|(s, &b)| b * pomdp.expected_reward(s, a))
                .sum();
            if depth > 1 {
                let pred = pomdp.predict(belief, a);
                for w in 0..pomdp.n_obs() {
                    let mut post: Vec<f64> = pred
                        .iter()
                        .enumerate()
                        .map(|(s, &p)| p * pomdp.o(s, w))
                        .collect();
                    let pw: f64 = post.iter().sum();
                    if pw <= 0.0 {
                        continue;
                    }
                    post.iter_mut().for_each(|x| *x /= pw);
                    let v = lookahead_q(pomdp, &post, depth - 1, gamma)
                        .into_iter()
                        .fold(f64::NEG_INFINITY, f64::max);
                    q += gamma * pw * v;
                }
            }
            q
        })
        .collect()
}

fn check_dims(pomdp: &Pomdp, mapping: &dyn HistoryMapping) -> Result<()> {
    if mapping.n_obs() != pomdp.n_obs() || mapping.n_actions() != pomdp.n_actions() {
        return Err(Error::DimensionMismatch(format!(
            "mapping {} does not match the model",
            mapping.descriptor()
        )));
    }
    Ok(())
}

fn uniform_histories(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    horizon: usize,
) -> Result<HistorySet> {
    enumerate_histories(
        pomdp,
        init,
        &SamplingPolicy::Uniform,
        horizon,
        DEFAULT_PRUNE_MASS,
        DEFAULT_HISTORY_CAP,
    )
}

fn members(sigma: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &s) in sigma.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let mut out: Vec<(usize, Vec<usize>)> = groups.into_iter().collect();
    out.sort_unstable_by_key(|(s, _)| *s);
    out.into_iter().map(|(_, v)| v).collect()
}

/// Within every cluster of `mapping_eps` and for every action, the spread of
/// the full-history `Q` (a `horizon`-step lookahead from the exact belief)
/// is at most `ε R_max / (1 − Γ)`. One instance per (cluster, action); the
/// recorded lhs is the largest pairwise gap in the cluster.
pub fn verify_proposition1(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    mapping_eps: &dyn HistoryMapping,
    horizon: usize,
    gamma_train: f64,
) -> Result<CheckReport> {
    check_dims(pomdp, mapping_eps)?;
    if !(0.0..1.0).contains(&gamma_train) {
        return Err(Error::GammaOutOfRange(gamma_train));
    }
    let set = uniform_histories(pomdp, init, horizon)?;
    let (eps, clusters) = epsilon_from_nodes(&set, mapping_eps)?;
    let q: Vec<Vec<f64>> = set
        .nodes
        .par_iter()
        .map(|n| lookahead_q(pomdp, &n.belief, horizon, gamma_train))
        .collect();
    let bound = eps * pomdp.r_max() / (1.0 - gamma_train);
    let mut report = CheckReport::new("proposition1", PROP1_TOL);
    report.coverage_mass = Some(set.coverage_mass());
    for group in members(&clusters.sigma) {
        for a in 0..pomdp.n_actions() {
            let (lo, hi) = group
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(q[i][a]), hi.max(q[i][a]))
                });
            report.record(hi - lo, bound);
        }
    }
    Ok(report)
}

/// `‖b(·|H1) − b(·|H2)‖₁ ≤ 2ε` for every same-cluster pair. The secondary
/// report checks, per action, that the joint next `(s', ω')` distributions
/// of the pair are also within `2ε`.
pub fn verify_lemma_l1(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    mapping_eps: &dyn HistoryMapping,
    horizon: usize,
) -> Result<CheckReport> {
    check_dims(pomdp, mapping_eps)?;
    let set = uniform_histories(pomdp, init, horizon)?;
    let (eps, clusters) = epsilon_from_nodes(&set, mapping_eps)?;
    let (ns, na, no) = (pomdp.n_states(), pomdp.n_actions(), pomdp.n_obs());
    let joints: Vec<Vec<f64>> = set
        .nodes
        .par_iter()
        .map(|n| {
            let mut j = Vec::with_capacity(na * ns * no);
            for a in 0..na {
                for (s, p) in pomdp.predict(&n.belief, a).into_iter().enumerate() {
                    j.extend(pomdp.o_row(s).iter().map(|q| p * q));
                }
            }
            j
        })
        .collect();
    let bound = 2.0 * eps;
    let width = ns * no;
    let partial: Vec<(CheckReport, CheckReport)> = members(&clusters.sigma)
        .par_iter()
        .map(|group| {
            let mut main = CheckReport::new("lemma_l1", L1_TOL);
            let mut joint = CheckReport::new("lemma_l1_joint", L1_TOL);
            for (x, &i) in group.iter().enumerate() {
                for &k in &group[x + 1..] {
                    main.record(l1(&set.nodes[i].belief, &set.nodes[k].belief), bound);
                    for a in 0..na {
                        let r = a * width..(a + 1) * width;
                        joint.record(l1(&joints[i][r.clone()], &joints[k][r]), bound);
                    }
                }
            }
            (main, joint)
        })
        .collect();
    let mut report = CheckReport::new("lemma_l1", L1_TOL);
    let mut joint = CheckReport::new("lemma_l1_joint", L1_TOL);
    for (m, j) in &partial {
        report.absorb(m);
        joint.absorb(j);
    }
    report.coverage_mass = Some(set.coverage_mass());
    report.secondary = Some(Box::new(joint));
    Ok(report)
}

/// `c_R max_a |Q*(σ¹,a) − Q*(σ²,a)| ≤ d_fix(σ¹,σ²)` for all pairs; needs
/// `c_t ≥ Γ`.
pub fn verify_lemma_qmetric(mdp: &AugmentedMdp, cfg: &BisimConfig) -> Result<CheckReport> {
    cfg.validate()?;
    if cfg.c_t < mdp.gamma() {
        return Err(Error::Config(format!(
            "c_t = {} must be at least the discount {}",
            cfg.c_t,
            mdp.gamma()
        )));
    }
    let sol = mdp.solve(1e-11)?;
    let run = bisim_run(mdp, cfg)?;
    let n = mdp.n_sigma();
    let mut report = CheckReport::new("lemma_qmetric", QMETRIC_TOL);
    for i in 0..n {
        for j in i + 1..n {
            let gap = (0..mdp.n_actions())
                .map(|a| (sol.q.get(i, a) - sol.q.get(j, a)).abs())
                .fold(0.0, f64::max);
            report.record(cfg.c_r * gap, run.metric.get(i, j));
        }
    }
    Ok(report)
}

/// `‖Q^π_true − Q^π_est‖_∞ ≤ max |B_est V^π_true − Q^π_true| / (1 − Γ)`,
/// where `B_est` is the one-step backup under the estimated model.
pub fn verify_bellman_residual(
    true_mdp: &AugmentedMdp,
    est_mdp: &AugmentedMdp,
    policy: &TabularPolicy,
) -> Result<CheckReport> {
    if true_mdp.n_sigma() != est_mdp.n_sigma() || true_mdp.n_actions() != est_mdp.n_actions() {
        return Err(Error::DimensionMismatch(
            "models live on different spaces".into(),
        ));
    }
    if true_mdp.gamma() != est_mdp.gamma() {
        return Err(Error::Config("models use different discounts".into()));
    }
    let v_true = true_mdp.policy_evaluation(policy)?;
    let q_true = true_mdp.backup_all(&v_true.0);
    let q_est = est_mdp.q_of_policy(policy)?;
    let cross = est_mdp.backup_all(&v_true.0);
    let sup = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let lhs = sup(&q_true.q, &q_est.q);
    let rhs = sup(&cross.q, &q_true.q) / (1.0 - true_mdp.gamma());
    let mut report = CheckReport::new("bellman_residual", RESIDUAL_TOL);
    report.record(lhs, rhs);
    Ok(report)
}

/// `P(s | σ)` under the infinite-data limit of `policy` over `n_l`-step
/// trajectories, indexed `[σ][s]`; rows of unvisited `σ` are zero.
pub fn asymptotic_state_occupancy(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    policy: &SamplingPolicy,
    mapping: &dyn HistoryMapping,
    n_l: usize,
) -> Result<Vec<f64>> {
    policy.validate(pomdp.n_actions())?;
    let prop = Propagator::new(pomdp, mapping)?;
    let probs = policy.probs(pomdp.n_actions());
    let mut occ = prop
        .run(
            init,
            ActionRule::Stochastic(&probs),
            n_l,
            1.0,
            Collect {
                slots: false,
                occupancy: true,
            },
        )?
        .occupancy;
    for row in occ.chunks_mut(pomdp.n_states()) {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|x| *x /= total);
        }
    }
    Ok(occ)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingReport {
    pub check: String,
    pub instances: usize,
    pub violations: usize,
    pub max_slack: f64,
    pub tolerance: f64,
    pub coverage_mass: Option<f64>,
    /// Samples per `(σ, a)`.
    pub n: usize,
    pub delta: f64,
    pub deviation: f64,
    /// `(σ, a)` pairs with positive occupancy.
    pub pairs: usize,
    /// Fraction of trials in which some pair deviated by more than `deviation`.
    pub exceedance: f64,
    /// `√(δ(1−δ)/trials)`.
    pub binomial_sigma: f64,
    pub max_observed_deviation: f64,
}

impl HoeffdingReport {
    pub fn passed(&self) -> bool {
        self.exceedance <= self.delta + 3.0 * self.binomial_sigma
    }
}

/// Draw `n` i.i.d. transitions per visited `(σ, a)` from the asymptotic
/// occupancy `P(s|σ)`, and compare the sample mean of `r + Γ V(σ')` with its
/// exact mean, where `V` is the optimal value of the asymptotic model.
#[allow(clippy::too_many_arguments)]
pub fn verify_hoeffding_envelope(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    mapping: &dyn HistoryMapping,
    n: usize,
    trials: usize,
    delta: f64,
    gamma: f64,
    n_l: usize,
    master_seed: u64,
) -> Result<HoeffdingReport> {
    check_dims(pomdp, mapping)?;
    if n == 0 || trials == 0 {
        return Err(Error::Config("n and trials must be positive".into()));
    }
    let policy = SamplingPolicy::Uniform;
    let model = AugmentedMdp::fit_asymptotic(pomdp, init, &policy, mapping, n_l, gamma)?;
    let v = model.solve(1e-10)?.v.0;
    let occ = asymptotic_state_occupancy(pomdp, init, &policy, mapping, n_l)?;
    let (ns, na) = (pomdp.n_states(), pomdp.n_actions());
    let pairs: Vec<(usize, usize)> = (0..mapping.cardinality())
        .filter(|&sg| occ[sg * ns..(sg + 1) * ns].iter().any(|&p| p > 0.0))
        .flat_map(|sg| (0..na).map(move |a| (sg, a)))
        .collect();
    let exact: Vec<f64> = pairs
        .iter()
        .map(|&(sg, a)| {
            let mut m = 0.0;
            for s in 0..ns {
                let ps = occ[sg * ns + s];
                if ps == 0.0 {
                    continue;
                }
                for s2 in 0..ns {
                    let pt = pomdp.t(s, a, s2);
                    if pt == 0.0 {
                        continue;
                    }
                    let r = pomdp.r(s, a, s2);
                    for w in 0..pomdp.n_obs() {
                        let po = pomdp.o(s2, w);
                        if po > 0.0 {
                            m += ps * pt * po * (r + gamma * v[mapping.advance(sg, a, r, w)]);
                        }
                    }
                }
            }
            m
        })
        .collect();
    let range = pomdp.r_max() / (1.0 - gamma);
    let deviation = hoeffding_deviation(n, range, mapping.cardinality(), na, delta)?;
    let per_trial: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = derived_rng(master_seed, &[tag::HOEFFDING, trial as u64]);
            let mut worst: f64 = 0.0;
            for (&(sg, a), &mu) in pairs.iter().zip(&exact) {
                let row = &occ[sg * ns..(sg + 1) * ns];
                let mut sum = 0.0;
                for _ in 0..n {
                    let s = sample_categorical(row, &mut rng);
                    let s2 = sample_categorical(pomdp.t_row(s, a), &mut rng);
                    let w = sample_categorical(pomdp.o_row(s2), &mut rng);
                    let r = pomdp.r(s, a, s2);
                    sum += r + gamma * v[mapping.advance(sg, a, r, w)];
                }
                worst = worst.max((sum / n as f64 - mu).abs());
            }
            worst
        })
        .collect();
    let exceed = per_trial.iter().filter(|&&w| w > deviation).count();
    let exceedance = exceed as f64 / trials as f64;
    let binomial_sigma = (delta * (1.0 - delta) / trials as f64).sqrt();
    let max_observed = per_trial.iter().copied().fold(0.0, f64::max);
    let tolerance = delta + 3.0 * binomial_sigma;
    Ok(HoeffdingReport {
        check: "hoeffding_envelope".into(),
        instances: trials,
        violations: exceed,
        max_slack: exceedance - tolerance,
        tolerance,
        coverage_mass: None,
        n,
        delta,
        deviation,
        pairs: pairs.len(),
        exceedance,
        binomial_sigma,
        max_observed_deviation: max_observed,
    })
}
