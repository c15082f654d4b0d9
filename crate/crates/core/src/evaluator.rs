//! Ground-truth evaluation of tabular policies in the real POMDP, the
//! `μ_P`/`σ_P` statistics, the bias/overfitting decomposition and
//! validation-based model selection.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_dataset_seeded, split, Dataset, SamplingPolicy};
use crate::error::{Error, Result};
use crate::mapping::{HistoryMapping, MappingSpec, WindowMapping};
use crate::mdp::{AugmentedMdp, Row, TabularPolicy, DEFAULT_TOL};
use crate::pomdp::{InitialDistribution, Pomdp};
use crate::propagate::{ActionRule, Collect, Propagator, SuccessorTable};
use crate::seed;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub n_rollouts: usize,
    /// Number of actions per rollout; also the dataset trajectory length.
    pub horizon: usize,
    pub discount_env: f64,
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 1000,
            horizon: 100,
            discount_env: 1.0,
            seed: 0,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rollouts == 0 || self.horizon == 0 {
            return Err(Error::Config(
                "n_rollouts and horizon must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.discount_env) {
            return Err(Error::Config(format!(
                "discount_env {} outside [0, 1]",
                self.discount_env
            )));
        }
        Ok(())
    }
}

/// Cumulative table with the tail pinned to +∞ from the last positive
/// entry, so a uniform draw never lands on a zero-probability index.
fn cumulative(row: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cum: Vec<f64> = row
        .iter()
        .map(|&p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = row.iter().rposition(|&p| p > 0.0) {
        cum[last..].iter_mut().for_each(|c| *c = f64::INFINITY);
    }
    cum
}

#[inline]
fn draw(cum: &[f64], u: f64) -> usize {
    cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
}

/// Monte-Carlo simulator of the POMDP under a tabular policy over `Σ`.
pub struct Simulator<'a> {
    pomdp: &'a Pomdp,
    table: &'a SuccessorTable,
    initial_sigma: Vec<u32>,
    init_cum: Vec<f64>,
    t_cum: Vec<f64>,
    o_cum: Vec<f64>,
    bins: Vec<u32>,
}

impl<'a> Simulator<'a> {
    pub fn new(
        pomdp: &'a Pomdp,
        init: &InitialDistribution,
        mapping: &dyn HistoryMapping,
        table: &'a SuccessorTable,
    ) -> Result<Self> {
        if mapping.n_obs() != pomdp.n_obs() || mapping.n_actions() != pomdp.n_actions() {
            return Err(Error::DimensionMismatch(format!(
                "mapping {} does not fit the model",
                mapping.descriptor()
            )));
        }
        let (ns, na) = (pomdp.n_states(), pomdp.n_actions());
        let mut t_cum = Vec::with_capacity(ns * na * ns);
        let mut bins = Vec::with_capacity(ns * na * ns);
        for s in 0..ns {
            for a in 0..na {
                t_cum.extend(cumulative(pomdp.t_row(s, a)));
                bins.extend(
                    pomdp
                        .r_row(s, a)
                        .iter()
                        .map(|&r| mapping.reward_bin(r) as u32),
                );
            }
        }
        let o_cum = (0..ns).flat_map(|s| cumulative(pomdp.o_row(s))).collect();
        Ok(Self {
            pomdp,
            table,
            initial_sigma: (0..pomdp.n_obs())
                .map(|w| mapping.initial(w) as u32)
                .collect(),
            init_cum: cumulative(init.probs()),
            t_cum,
            o_cum,
            bins,
        })
    }

    /// Discounted return of one rollout of `horizon` actions.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        policy: &[usize],
        horizon: usize,
        discount: f64,
        rng: &mut R,
    ) -> f64 {
        let p = self.pomdp;
        let (ns, no, na) = (p.n_states(), p.n_obs(), p.n_actions());
        let mut s = draw(&self.init_cum, rng.gen());
        let w = draw(&self.o_cum[s * no..(s + 1) * no], rng.gen());
        let mut sigma = self.initial_sigma[w] as usize;
        let mut ret = 0.0;
        let mut disc = 1.0;
        for _ in 0..horizon {
            let a = policy[sigma];
            let base = (s * na + a) * ns;
            let s2 = draw(&self.t_cum[base..base + ns], rng.gen());
            ret += disc * p.r(s, a, s2);
            let w2 = draw(&self.o_cum[s2 * no..(s2 + 1) * no], rng.gen());
            sigma = self
                .table
                .get(sigma, a, self.table.slot(w2, self.bins[base + s2] as usize));
            s = s2;
            disc *= discount;
        }
        ret
    }

    /// Per-rollout returns; rollout `i` uses a stream derived from `(master, i)`.
    pub fn returns(&self, policy: &[usize], cfg: &RolloutConfig, master: u64) -> Vec<f64> {
        (0..cfg.n_rollouts)
            .into_par_iter()
            .map(|i| {
                let mut rng = seed::derived_rng(master, &[seed::tag::ROLLOUT, i as u64]);
                self.rollout(policy, cfg.horizon, cfg.discount_env, &mut rng)
            })
            .collect()
    }

    /// `(mean, standard error)` over `cfg.n_rollouts` rollouts.
    pub fn value(&self, policy: &[usize], cfg: &RolloutConfig, master: u64) -> (f64, f64) {
        let r = self.returns(policy, cfg, master);
        (stats::mean(&r), stats::standard_error(&r))
    }
}

fn check_policy(mapping: &dyn HistoryMapping, policy: &TabularPolicy) -> Result<()> {
    if policy.actions.len() != mapping.cardinality() {
        return Err(Error::DimensionMismatch(format!(
            "policy covers {} states, {} has {}",
            policy.actions.len(),
            mapping.descriptor(),
            mapping.cardinality()
        )));
    }
    if policy.actions.iter().any(|&a| a >= mapping.n_actions()) {
        return Err(Error::OutOfRange("policy action".into()));
    }
    Ok(())
}

/// Monte-Carlo estimate of the policy's return: `(mean, standard error)`.
pub fn rollout_value<R: Rng + ?Sized>(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    mapping: &dyn HistoryMapping,
    policy: &TabularPolicy,
    cfg: &RolloutConfig,
    rng: &mut R,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    check_policy(mapping, policy)?;
    let table = SuccessorTable::new(mapping);
    let sim = Simulator::new(pomdp, init, mapping, &table)?;
    Ok(sim.value(&policy.actions, cfg, rng.gen()))
}

/// Exact expected return over `horizon` actions by joint propagation.
pub fn exact_value(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    mapping: &dyn HistoryMapping,
    policy: &TabularPolicy,
    horizon: usize,
    discount_env: f64,
) -> Result<f64> {
    check_policy(mapping, policy)?;
    let prop = Propagator::new(pomdp, mapping)?;
    Ok(prop
        .run(
            init,
            ActionRule::Table(&policy.actions),
            horizon,
            discount_env,
            Collect::default(),
        )?
        .value)
}

/// `H`-step value of a policy inside an augmented MDP, from its initial
/// distribution, by backward recursion.
pub fn model_value(mdp: &AugmentedMdp, policy: &[usize], horizon: usize, discount: f64) -> f64 {
    let n = mdp.n_sigma();
    let mut v = vec![0.0; n];
    for _ in 0..horizon {
        let v_mean = stats::mean(&v);
        v = (0..n)
            .map(|s| match mdp.row(s, policy[s]) {
                Row::Uniform => mdp.fallback_reward() + discount * v_mean,
                Row::Empirical(succ) => succ
                    .iter()
                    .map(|x| x.prob * (x.reward + discount * v[x.next]))
                    .sum(),
            })
            .collect();
    }
    mdp.initial().iter().map(|&(s, p)| p * v[s]).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentStats {
    pub mu: f64,
    /// Square root of the population variance across datasets.
    pub sigma: f64,
    pub returns: Vec<f64>,
}

impl ExperimentStats {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        Self {
            mu: stats::mean(&returns),
            sigma: stats::population_variance(&returns).sqrt(),
            returns,
        }
    }
}

/// A mapping evaluated on shared datasets, with its successor table.
pub struct Learner<'a> {
    pub mapping: &'a dyn HistoryMapping,
    pub table: &'a SuccessorTable,
}

/// How a fitted policy's true value is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    Rollout,
    Exact,
}

/// Fit, solve and evaluate every `(learner, Γ)` pair on one dataset. The
/// evaluation stream `eval_seed` is shared by all pairs.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_on_dataset(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    dataset: &Dataset,
    learners: &[Learner<'_>],
    gammas: &[f64],
    cfg: &RolloutConfig,
    evaluation: Evaluation,
    eval_seed: u64,
) -> Vec<Vec<Result<f64>>> {
    learners
        .iter()
        .map(|l| {
            let base = AugmentedMdp::fit(dataset, l.mapping, 0.0);
            gammas
                .iter()
                .map(|&g| {
                    let mdp = match &base {
                        Ok(m) => m.with_gamma(g)?,
                        Err(e) => return Err(Error::Config(format!("fit failed: {e}"))),
                    };
                    let sol = mdp.solve(DEFAULT_TOL)?;
                    match evaluation {
                        Evaluation::Rollout => {
                            let sim = Simulator::new(pomdp, init, l.mapping, l.table)?;
                            Ok(sim.value(&sol.policy.actions, cfg, eval_seed).0)
                        }
                        Evaluation::Exact => exact_value(
                            pomdp,
                            init,
                            l.mapping,
                            &sol.policy,
                            cfg.horizon,
                            cfg.discount_env,
                        ),
                    }
                })
                .collect()
        })
        .collect()
}

/// `μ_P` and `σ_P` of `(mapping, Γ)` at `n_tr` trajectories of
/// `cfg.horizon` steps, over `n_datasets` independent datasets.
#[allow(clippy::too_many_arguments)]
pub fn mu_sigma<R: Rng + ?Sized>(
    pomdp: &Pomdp,
    mapping: &dyn HistoryMapping,
    gamma_train: f64,
    n_tr: usize,
    n_datasets: usize,
    cfg: &RolloutConfig,
    rng: &mut R,
) -> Result<ExperimentStats> {
    cfg.validate()?;
    let master: u64 = rng.gen();
    let table = SuccessorTable::new(mapping);
    let learners = [Learner {
        mapping,
        table: &table,
    }];
    let returns = (0..n_datasets)
        .map(|d| {
            let ds = sample_dataset_seeded(
                pomdp,
                pomdp.init(),
                &SamplingPolicy::Uniform,
                n_tr,
                cfg.horizon,
                seed::derive(master, &[seed::tag::DATA, d as u64]),
            )?;
            let eval_seed = seed::derive(master, &[seed::tag::EVAL, d as u64]);
            evaluate_on_dataset(
                pomdp,
                pomdp.init(),
                &ds,
                &learners,
                &[gamma_train],
                cfg,
                Evaluation::Rollout,
                eval_seed,
            )
            .pop()
            .and_then(|mut v| v.pop())
            .expect("one learner, one gamma")
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ExperimentStats::from_returns(returns))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub reference: String,
    pub mapping: String,
    pub evaluation: Evaluation,
    pub v_reference: f64,
    pub v_asymptotic: f64,
    pub v_expected: f64,
    pub bias: f64,
    pub overfitting: f64,
    /// Per-dataset values behind `v_expected`.
    pub dataset_values: Vec<f64>,
}

impl Decomposition {
    pub fn new(
        reference: String,
        mapping: String,
        evaluation: Evaluation,
        v_reference: f64,
        v_asymptotic: f64,
        dataset_values: Vec<f64>,
    ) -> Self {
        let v_expected = stats::mean(&dataset_values);
        Self {
            reference,
            mapping,
            evaluation,
            v_reference,
            v_asymptotic,
            v_expected,
            bias: v_reference - v_asymptotic,
            overfitting: v_asymptotic - v_expected,
            dataset_values,
        }
    }
}

/// Bias/overfitting split of `mapping` against `mapping_ref` at `n_tr`
/// trajectories. Values are exact when the joint space fits the
/// propagation cap, otherwise Monte-Carlo with shared evaluation streams.
#[allow(clippy::too_many_arguments)]
pub fn decompose<R: Rng + ?Sized>(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    mapping_ref: &dyn HistoryMapping,
    mapping: &dyn HistoryMapping,
    gamma_train: f64,
    n_tr: usize,
    n_datasets: usize,
    cfg: &RolloutConfig,
    rng: &mut R,
) -> Result<Decomposition> {
    cfg.validate()?;
    let master: u64 = rng.gen();
    let eval_seed = seed::derive(master, &[seed::tag::EVAL]);
    let exact =
        Propagator::new(pomdp, mapping_ref).is_ok() && Propagator::new(pomdp, mapping).is_ok();
    let evaluation = if exact {
        Evaluation::Exact
    } else {
        Evaluation::Rollout
    };
    let value_of = |m: &dyn HistoryMapping, policy: &TabularPolicy| -> Result<f64> {
        if exact {
            exact_value(pomdp, init, m, policy, cfg.horizon, cfg.discount_env)
        } else {
            let table = SuccessorTable::new(m);
            Ok(Simulator::new(pomdp, init, m, &table)?
                .value(&policy.actions, cfg, eval_seed)
                .0)
        }
    };
    let policy_s = SamplingPolicy::Uniform;
    let asym = |m: &dyn HistoryMapping| -> Result<f64> {
        let mdp =
            AugmentedMdp::fit_asymptotic(pomdp, init, &policy_s, m, cfg.horizon, gamma_train)?;
        value_of(m, &mdp.solve(DEFAULT_TOL)?.policy)
    };
    let v_reference = asym(mapping_ref)?;
    let v_asymptotic = asym(mapping)?;
    let dataset_values = (0..n_datasets)
        .map(|d| {
            let ds = sample_dataset_seeded(
                pomdp,
                init,
                &policy_s,
                n_tr,
                cfg.horizon,
                seed::derive(master, &[seed::tag::DATA, d as u64]),
            )?;
            let mdp = AugmentedMdp::fit(&ds, mapping, gamma_train)?;
            value_of(mapping, &mdp.solve(DEFAULT_TOL)?.policy)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Decomposition::new(
        mapping_ref.descriptor(),
        mapping.descriptor(),
        evaluation,
        v_reference,
        v_asymptotic,
        dataset_values,
    ))
}

/// Monte-Carlo simulator of an augmented MDP.
struct ModelSimulator<'a> {
    mdp: &'a AugmentedMdp,
    initial: Vec<usize>,
    initial_cum: Vec<f64>,
    rows: Vec<Option<Vec<f64>>>,
}

impl<'a> ModelSimulator<'a> {
    fn new(mdp: &'a AugmentedMdp) -> Self {
        let rows = (0..mdp.n_sigma() * mdp.n_actions())
            .map(
                |i| match mdp.row(i / mdp.n_actions(), i % mdp.n_actions()) {
                    Row::Uniform => None,
                    Row::Empirical(s) => {
                        Some(cumulative(&s.iter().map(|x| x.prob).collect::<Vec<_>>()))
                    }
                },
            )
            .collect();
        let initial = mdp.initial().iter().map(|&(s, _)| s).collect();
        let initial_cum = cumulative(&mdp.initial().iter().map(|&(_, p)| p).collect::<Vec<_>>());
        Self {
            mdp,
            initial,
            initial_cum,
            rows,
        }
    }

    fn rollout<R: Rng + ?Sized>(
        &self,
        act: impl Fn(usize) -> usize,
        horizon: usize,
        discount: f64,
        rng: &mut R,
    ) -> f64 {
        let m = self.mdp;
        let mut sigma = self.initial[draw(&self.initial_cum, rng.gen())];
        let mut ret = 0.0;
        let mut disc = 1.0;
        for _ in 0..horizon {
            let a = act(sigma);
            let (next, r) = match (&self.rows[sigma * m.n_actions() + a], m.row(sigma, a)) {
                (Some(cum), Row::Empirical(succ)) => {
                    let x = &succ[draw(cum, rng.gen())];
                    (x.next, x.reward)
                }
                _ => (rng.gen_range(0..m.n_sigma()), m.fallback_reward()),
            };
            ret += disc * r;
            disc *= discount;
            sigma = next;
        }
        ret
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub mapping: String,
    pub gamma_train: f64,
    pub score: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: usize,
    pub reference: String,
    pub scores: Vec<CandidateScore>,
}

/// Split the data, fit every candidate on the training part and score it by
/// rollouts in a model fitted on the validation part under the finest
/// candidate window. Ties go to the earliest candidate.
pub fn validation_select<R: Rng + ?Sized>(
    dataset: &Dataset,
    n_obs: usize,
    n_actions: usize,
    candidates: &[(MappingSpec, f64)],
    train_fraction: f64,
    cfg: &RolloutConfig,
    rng: &mut R,
) -> Result<Selection> {
    cfg.validate()?;
    if candidates.is_empty() {
        return Err(Error::Config("no candidates".into()));
    }
    let (train, valid) = split(dataset, train_fraction, rng)?;
    let rewards = dataset
        .trajectories
        .iter()
        .flat_map(|t| t.rewards.iter().copied());
    let range = rewards.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r), hi.max(r))
    });
    let mappings: Vec<WindowMapping> = candidates
        .iter()
        .map(|(spec, _)| spec.build(n_obs, n_actions, range))
        .collect::<Result<_>>()?;
    let ref_idx = (0..mappings.len())
        .max_by(|&a, &b| {
            mappings[a]
                .cardinality()
                .cmp(&mappings[b].cardinality())
                .then(b.cmp(&a))
        })
        .expect("non-empty");
    let reference = &mappings[ref_idx];
    let model = AugmentedMdp::fit(&valid, reference, 0.0)?;
    let sim = ModelSimulator::new(&model);
    let master: u64 = rng.gen();

    let scores = candidates
        .iter()
        .zip(&mappings)
        .map(|(&(_, gamma), m)| {
            let proj = reference.suffix_projection(m)?;
            let policy = AugmentedMdp::fit(&train, m, gamma)?
                .solve(DEFAULT_TOL)?
                .policy;
            let returns: Vec<f64> = (0..cfg.n_rollouts)
                .into_par_iter()
                .map(|i| {
                    let mut r = seed::derived_rng(master, &[seed::tag::ROLLOUT, i as u64]);
                    sim.rollout(
                        |s| policy.actions[proj[s]],
                        cfg.horizon,
                        cfg.discount_env,
                        &mut r,
                    )
                })
                .collect();
            Ok(CandidateScore {
                mapping: m.descriptor(),
                gamma_train: gamma,
                score: stats::mean(&returns),
                standard_error: stats::standard_error(&returns),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.score > scores[best].score {
            best = i;
        }
    }
    Ok(Selection {
        best,
        reference: reference.descriptor(),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::fixture;
    use crate::mapping::phi_h;

    #[test]
    fn chain2_optimal_rollout_is_exact() {
        let p = fixture("chain2").unwrap();
        let m = phi_h(1, 2, 2).unwrap();
        let pol = TabularPolicy {
            mapping: m.descriptor(),
            actions: vec![0, 0],
        };
        let (mean, se) = rollout_value(
            &p,
            p.init(),
            &m,
            &pol,
            &RolloutConfig::default(),
            &mut seed::rng(1),
        )
        .unwrap();
        assert_eq!((mean, se), (50.0, 0.0));
        assert_eq!(exact_value(&p, p.init(), &m, &pol, 100, 1.0).unwrap(), 50.0);
        assert_eq!(exact_value(&p, p.init(), &m, &pol, 0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn single_dataset_has_zero_sigma() {
        let p = fixture("identity_obs_5").unwrap();
        let m = phi_h(1, 5, 2).unwrap();
        let cfg = RolloutConfig {
            n_rollouts: 50,
            horizon: 20,
            ..RolloutConfig::default()
        };
        let st = mu_sigma(&p, &m, 0.9, 5, 1, &cfg, &mut seed::rng(4)).unwrap();
        assert_eq!(st.sigma, 0.0);
        assert_eq!(st.returns.len(), 1);
    }

    #[test]
    fn decomposition_identity_holds() {
        let p = fixture("uninformative_obs").unwrap();
        let r = phi_h(2, 2, 2).unwrap();
        let m = phi_h(1, 2, 2).unwrap();
        let cfg = RolloutConfig {
            horizon: 10,
            ..RolloutConfig::default()
        };
        let d = decompose(&p, p.init(), &r, &m, 0.9, 3, 4, &cfg, &mut seed::rng(2)).unwrap();
        assert_eq!(d.evaluation, Evaluation::Exact);
        assert!((d.bias + d.overfitting - (d.v_reference - d.v_expected)).abs() < 1e-12);
    }

    #[test]
    fn duplicated_candidates_pick_the_first() {
        let p = fixture("identity_obs_5").unwrap();
        let ds = sample_dataset_seeded(&p, p.init(), &SamplingPolicy::Uniform, 10, 10, 3).unwrap();
        let cfg = RolloutConfig {
            n_rollouts: 20,
            horizon: 10,
            ..RolloutConfig::default()
        };
        let c = (MappingSpec::PhiH(1), 0.9);
        let sel = validation_select(&ds, 5, 2, &[c, c], 0.5, &cfg, &mut seed::rng(0)).unwrap();
        assert_eq!(sel.best, 0);
        assert_eq!(sel.scores[0].score, sel.scores[1].score);
    }
}
