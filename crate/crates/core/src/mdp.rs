//! Frequentist augmented MDPs over a mapped state space `Σ`.
//!
//! `T̂(σ,a,σ')` is the observed transition frequency and `R̂(σ,a,σ')` the
//! mean observed reward for the triple. A `(σ,a)` pair never observed gets
//! the uniform row `1/|Σ|`; a triple never observed gets the dataset-wide
//! mean reward. Rows are stored sparsely.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SamplingPolicy, Trajectory};
use crate::error::{Error, Result};
use crate::mapping::{HistoryMapping, WindowMapping};
use crate::pomdp::{InitialDistribution, Pomdp};
use crate::propagate::{ActionRule, Collect, Propagator};

pub const DEFAULT_TOL: f64 = 1e-8;
/// Residual target of `policy_evaluation`.
pub const EVAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Successor {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
    /// Count (or expected count) behind this entry.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Row {
    /// Never observed: `T̂ = 1/|Σ|`, `R̂ = fallback`.
    Uniform,
    Empirical(Vec<Successor>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMdp {
    mapping: String,
    n_sigma: usize,
    n_actions: usize,
    gamma: f64,
    fallback_reward: f64,
    rows: Vec<Row>,
    row_weight: Vec<f64>,
    initial: Vec<(usize, f64)>,
    n_trajectories: Option<usize>,
    n_l: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_actions: usize,
    pub q: Vec<f64>,
}

impl QTable {
    #[inline]
    pub fn get(&self, sigma: usize, action: usize) -> f64 {
        self.q[sigma * self.n_actions + action]
    }

    pub fn row(&self, sigma: usize) -> &[f64] {
        &self.q[sigma * self.n_actions..(sigma + 1) * self.n_actions]
    }

    pub fn n_sigma(&self) -> usize {
        self.q.len() / self.n_actions
    }

    /// Greedy policy, lowest action index on ties.
    pub fn greedy(&self) -> Vec<usize> {
        self.q
            .chunks(self.n_actions)
            .map(|row| {
                let mut best = 0;
                for (a, &x) in row.iter().enumerate().skip(1) {
                    if x > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    pub fn values(&self) -> ValueTable {
        ValueTable(
            self.q
                .chunks(self.n_actions)
                .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueTable(pub Vec<f64>);

/// Deterministic stationary policy over `Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub mapping: String,
    pub actions: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PolicyJson {
    mapping: String,
    actions: BTreeMap<String, usize>,
}

impl TabularPolicy {
    #[inline]
    pub fn action(&self, sigma: usize) -> usize {
        self.actions[sigma]
    }

    pub fn to_json(&self, mapping: &WindowMapping) -> String {
        let actions = self
            .actions
            .iter()
            .enumerate()
            .map(|(s, &a)| (mapping.key_to_string(&mapping.key(s)), a))
            .collect();
        serde_json::to_string_pretty(&PolicyJson {
            mapping: self.mapping.clone(),
            actions,
        })
        .expect("policy serializes")
    }

    pub fn from_json(s: &str, mapping: &WindowMapping) -> Result<Self> {
        let j: PolicyJson = serde_json::from_str(s)?;
        if j.mapping != mapping.descriptor() {
            return Err(Error::InvalidDescriptor(format!(
                "policy is for {}, mapping is {}",
                j.mapping,
                mapping.descriptor()
            )));
        }
        let mut actions = vec![None; mapping.cardinality()];
        for (k, a) in j.actions {
            let key = mapping.key_from_str(&k)?;
            let idx = mapping.index_of(&key).expect("parsed key is valid");
            actions[idx] = Some(a);
        }
        let actions = actions
            .into_iter()
            .enumerate()
            .map(|(s, a)| a.ok_or_else(|| Error::Config(format!("policy misses state {s}"))))
            .collect::<Result<_>>()?;
        Ok(Self {
            mapping: j.mapping,
            actions,
        })
    }
}

/// Value iteration output.
#[derive(Debug, Clone)]
pub struct Solution {
    pub q: QTable,
    pub v: ValueTable,
    pub policy: TabularPolicy,
    /// `‖Q_{k+1} − Q_k‖_∞` per sweep.
    pub residuals: Vec<f64>,
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompSum {
    sum: f64,
    c: f64,
}

impl CompSum {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn merge(&mut self, o: CompSum) {
        self.add(o.sum);
        self.add(o.c);
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Cell {
    count: u64,
    reward: CompSum,
}

impl Cell {
    fn merge(&mut self, o: &Cell) {
        self.count += o.count;
        self.reward.merge(o.reward);
    }
}

/// Largest `|Σ|·N_A·slots` kept in a dense counter array.
const DENSE_CELLS: usize = 1 << 20;

#[derive(Debug, Clone)]
enum Store {
    Dense(Vec<Cell>),
    Sparse(HashMap<usize, Cell>),
}

/// Mergeable counting pass of `fit`. Counters are keyed by
/// `(σ, a, slot)` with `slot = ω'·B + reward bin`, which determines `σ'`.
/// Merging is associative and commutative on the integer counts.
#[derive(Debug, Clone)]
pub struct FitAccumulator {
    n_actions: usize,
    n_bins: usize,
    slots: usize,
    n_cells: usize,
    store: Option<Store>,
    initial: BTreeMap<usize, u64>,
    reward: CompSum,
    transitions: u64,
    trajectories: usize,
    n_l: usize,
}

impl FitAccumulator {
    pub fn new(mapping: &dyn HistoryMapping) -> Self {
        let n_bins = mapping.n_reward_bins();
        let slots = mapping.n_obs() * n_bins;
        Self {
            n_actions: mapping.n_actions(),
            n_bins,
            slots,
            n_cells: mapping.cardinality() * mapping.n_actions() * slots,
            store: None,
            initial: BTreeMap::new(),
            reward: CompSum::default(),
            transitions: 0,
            trajectories: 0,
            n_l: 0,
        }
    }

    fn store(&mut self) -> &mut Store {
        let n = self.n_cells;
        self.store.get_or_insert_with(|| {
            if n <= DENSE_CELLS {
                Store::Dense(vec![Cell::default(); n])
            } else {
                Store::Sparse(HashMap::new())
            }
        })
    }

    pub fn add_trajectory(&mut self, mapping: &dyn HistoryMapping, t: &Trajectory) {
        let mut sigma = mapping.initial(t.initial_obs);
        *self.initial.entry(sigma).or_default() += 1;
        let (na, nb, slots) = (self.n_actions, self.n_bins, self.slots);
        for i in 0..t.len() {
            let (a, r, w) = (t.actions[i], t.rewards[i], t.obs[i]);
            let bin = mapping.reward_bin(r);
            let idx = (sigma * na + a) * slots + w * nb + bin;
            let cell = match self.store() {
                Store::Dense(v) => &mut v[idx],
                Store::Sparse(m) => m.entry(idx).or_default(),
            };
            cell.count += 1;
            cell.reward.add(r);
            self.reward.add(r);
            sigma = mapping.advance_binned(sigma, a, bin, w);
        }
        self.transitions += t.len() as u64;
        self.trajectories += 1;
        self.n_l = self.n_l.max(t.len());
    }

    pub fn add_dataset(self, mapping: &dyn HistoryMapping, trajectories: &[Trajectory]) -> Self {
        // Chunking depends only on the input size, and partial sums are
        // merged in order, so float totals do not depend on the pool width.
        let chunk = trajectories.len().div_ceil(16).max(64);
        trajectories
            .par_chunks(chunk)
            .map(|ts| {
                let mut acc = FitAccumulator::new(mapping);
                ts.iter().for_each(|t| acc.add_trajectory(mapping, t));
                acc
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(self, FitAccumulator::merge)
    }

    pub fn merge(mut self, mut other: Self) -> Self {
        if self.store.is_none() {
            std::mem::swap(&mut self.store, &mut other.store);
        }
        match (self.store.as_mut(), other.store.take()) {
            (_, None) => {}
            (Some(Store::Dense(a)), Some(Store::Dense(b))) => {
                a.iter_mut().zip(&b).for_each(|(x, y)| x.merge(y))
            }
            (Some(Store::Sparse(a)), Some(Store::Sparse(b))) => {
                for (k, c) in b {
                    a.entry(k).or_default().merge(&c);
                }
            }
            _ => unreachable!("accumulators of one mapping share a layout"),
        }
        for (k, n) in other.initial {
            *self.initial.entry(k).or_default() += n;
        }
        self.reward.merge(other.reward);
        self.transitions += other.transitions;
        self.trajectories += other.trajectories;
        self.n_l = self.n_l.max(other.n_l);
        self
    }

    pub fn finish(self, mapping: &dyn HistoryMapping, gamma_train: f64) -> Result<AugmentedMdp> {
        check_gamma(gamma_train)?;
        if self.transitions == 0 {
            return Err(Error::EmptyDataset);
        }
        let (ns, na, slots) = (mapping.cardinality(), self.n_actions, self.slots);
        let cells: Vec<(usize, Cell)> = match self.store {
            None => Vec::new(),
            Some(Store::Dense(v)) => v
                .into_iter()
                .enumerate()
                .filter(|(_, c)| c.count > 0)
                .collect(),
            Some(Store::Sparse(m)) => {
                let mut v: Vec<_> = m.into_iter().collect();
                v.sort_unstable_by_key(|&(k, _)| k);
                v
            }
        };
        let mut rows = vec![Row::Uniform; ns * na];
        let mut row_weight = vec![0.0; ns * na];
        let mut i = 0;
        while i < cells.len() {
            let row = cells[i].0 / slots;
            let (sigma, a) = (row / na, row % na);
            let mut succ: BTreeMap<usize, Cell> = BTreeMap::new();
            while i < cells.len() && cells[i].0 / slots == row {
                let slot = cells[i].0 % slots;
                let next = mapping.advance_binned(sigma, a, slot % self.n_bins, slot / self.n_bins);
                succ.entry(next).or_default().merge(&cells[i].1);
                i += 1;
            }
            let total: u64 = succ.values().map(|c| c.count).sum();
            row_weight[row] = total as f64;
            rows[row] = Row::Empirical(
                succ.into_iter()
                    .map(|(next, c)| Successor {
                        next,
                        prob: c.count as f64 / total as f64,
                        reward: c.reward.value() / c.count as f64,
                        weight: c.count as f64,
                    })
                    .collect(),
            );
        }
        let initial = self
            .initial
            .into_iter()
            .map(|(s, n)| (s, n as f64 / self.trajectories as f64))
            .collect();
        Ok(AugmentedMdp {
            mapping: mapping.descriptor(),
            n_sigma: ns,
            n_actions: na,
            gamma: gamma_train,
            fallback_reward: self.reward.value() / self.transitions as f64,
            rows,
            row_weight,
            initial,
            n_trajectories: Some(self.trajectories),
            n_l: self.n_l,
        })
    }
}

fn check_gamma(g: f64) -> Result<()> {
    if (0.0..1.0).contains(&g) {
        Ok(())
    } else {
        Err(Error::GammaOutOfRange(g))
    }
}

impl AugmentedMdp {
    /// Count-based fit of a dataset.
    pub fn fit(dataset: &Dataset, mapping: &dyn HistoryMapping, gamma_train: f64) -> Result<Self> {
        check_gamma(gamma_train)?;
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        FitAccumulator::new(mapping)
            .add_dataset(mapping, &dataset.trajectories)
            .finish(mapping, gamma_train)
    }

    /// Infinite-data limit of `fit` for trajectories of `n_l` steps.
    pub fn fit_asymptotic(
        pomdp: &Pomdp,
        init: &InitialDistribution,
        policy: &SamplingPolicy,
        mapping: &dyn HistoryMapping,
        n_l: usize,
        gamma_train: f64,
    ) -> Result<Self> {
        check_gamma(gamma_train)?;
        policy.validate(pomdp.n_actions())?;
        if n_l == 0 {
            return Err(Error::EmptyDataset);
        }
        let prop = Propagator::new(pomdp, mapping)?;
        let probs = policy.probs(pomdp.n_actions());
        let res = prop.run(
            init,
            ActionRule::Stochastic(&probs),
            n_l,
            1.0,
            Collect {
                slots: true,
                occupancy: false,
            },
        )?;
        let (ns, na, slots) = (mapping.cardinality(), pomdp.n_actions(), prop.n_slots());
        let mut rows = vec![Row::Uniform; ns * na];
        let mut row_weight = vec![0.0; ns * na];
        for sigma in 0..ns {
            for a in 0..na {
                let base = (sigma * na + a) * slots;
                let mut succ: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
                for slot in 0..slots {
                    let m = res.slot_mass[base + slot];
                    if m > 0.0 {
                        let e = succ.entry(prop.successor(sigma, a, slot)).or_default();
                        e.0 += m;
                        e.1 += res.slot_reward[base + slot];
                    }
                }
                let total: f64 = succ.values().map(|e| e.0).sum();
                if total > 0.0 {
                    row_weight[sigma * na + a] = total;
                    rows[sigma * na + a] = Row::Empirical(
                        succ.into_iter()
                            .map(|(next, (m, rm))| Successor {
                                next,
                                prob: m / total,
                                reward: rm / m,
                                weight: m,
                            })
                            .collect(),
                    );
                }
            }
        }
        let total_mass: f64 = res.slot_mass.iter().sum();
        let total_reward: f64 = res.slot_reward.iter().sum();
        Ok(Self {
            mapping: mapping.descriptor(),
            n_sigma: ns,
            n_actions: na,
            gamma: gamma_train,
            fallback_reward: total_reward / total_mass,
            rows,
            row_weight,
            initial: res
                .initial_sigma
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(s, &p)| (s, p))
                .collect(),
            n_trajectories: None,
            n_l,
        })
    }

    /// Build from dense `T̂[σ][a][σ']` / `R̂[σ][a][σ']` tables, uniform initial
    /// distribution, zero fallback reward.
    pub fn from_dense(
        n_sigma: usize,
        n_actions: usize,
        t: &[f64],
        r: &[f64],
        gamma_train: f64,
    ) -> Result<Self> {
        check_gamma(gamma_train)?;
        let size = n_sigma * n_actions * n_sigma;
        if t.len() != size || r.len() != size {
            return Err(Error::DimensionMismatch(format!(
                "dense tables need {size} entries"
            )));
        }
        let mut rows = Vec::with_capacity(n_sigma * n_actions);
        for i in 0..n_sigma * n_actions {
            let tr = &t[i * n_sigma..(i + 1) * n_sigma];
            let sum: f64 = tr.iter().sum();
            if (sum - 1.0).abs() > crate::pomdp::SIMPLEX_TOL || tr.iter().any(|&p| p < 0.0) {
                return Err(Error::NonStochasticRow {
                    kind: crate::error::RowKind::Transition,
                    index: vec![i / n_actions, i % n_actions],
                    sum,
                });
            }
            rows.push(Row::Empirical(
                (0..n_sigma)
                    .filter(|&j| tr[j] > 0.0)
                    .map(|j| Successor {
                        next: j,
                        prob: tr[j],
                        reward: r[i * n_sigma + j],
                        weight: tr[j],
                    })
                    .collect(),
            ));
        }
        Ok(Self {
            mapping: "dense".into(),
            n_sigma,
            n_actions,
            gamma: gamma_train,
            fallback_reward: 0.0,
            rows,
            row_weight: vec![1.0; n_sigma * n_actions],
            initial: (0..n_sigma).map(|s| (s, 1.0 / n_sigma as f64)).collect(),
            n_trajectories: None,
            n_l: 1,
        })
    }

    pub fn mapping(&self) -> &str {
        &self.mapping
    }
    pub fn n_sigma(&self) -> usize {
        self.n_sigma
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn fallback_reward(&self) -> f64 {
        self.fallback_reward
    }
    pub fn n_l(&self) -> usize {
        self.n_l
    }
    pub fn n_trajectories(&self) -> Option<usize> {
        self.n_trajectories
    }
    pub fn initial(&self) -> &[(usize, f64)] {
        &self.initial
    }

    pub fn set_initial(&mut self, initial: Vec<(usize, f64)>) {
        self.initial = initial;
    }

    /// Same model with a different training discount.
    pub fn with_gamma(&self, gamma_train: f64) -> Result<Self> {
        check_gamma(gamma_train)?;
        Ok(Self {
            gamma: gamma_train,
            ..self.clone()
        })
    }

    #[inline]
    pub fn row(&self, sigma: usize, action: usize) -> &Row {
        &self.rows[sigma * self.n_actions + action]
    }

    pub fn is_observed(&self, sigma: usize, action: usize) -> bool {
        matches!(self.row(sigma, action), Row::Empirical(_))
    }

    /// Count of `(σ,a)` (expected count per trajectory for asymptotic fits).
    pub fn row_weight(&self, sigma: usize, action: usize) -> f64 {
        self.row_weight[sigma * self.n_actions + action]
    }

    /// Fraction of all transitions that start in `(σ,a)`.
    pub fn occupancy(&self, sigma: usize, action: usize) -> f64 {
        self.row_weight(sigma, action) / (self.n_trajectories.unwrap_or(1) as f64 * self.n_l as f64)
    }

    #[inline]
    pub fn t_hat(&self, sigma: usize, action: usize, next: usize) -> f64 {
        match self.row(sigma, action) {
            Row::Uniform => 1.0 / self.n_sigma as f64,
            Row::Empirical(s) => s.iter().find(|x| x.next == next).map_or(0.0, |x| x.prob),
        }
    }

    #[inline]
    pub fn r_hat(&self, sigma: usize, action: usize, next: usize) -> f64 {
        match self.row(sigma, action) {
            Row::Uniform => self.fallback_reward,
            Row::Empirical(s) => s
                .iter()
                .find(|x| x.next == next)
                .map_or(self.fallback_reward, |x| x.reward),
        }
    }

    /// Dense `T̂(σ,a,·)`.
    pub fn t_row_dense(&self, sigma: usize, action: usize) -> Vec<f64> {
        match self.row(sigma, action) {
            Row::Uniform => vec![1.0 / self.n_sigma as f64; self.n_sigma],
            Row::Empirical(s) => {
                let mut v = vec![0.0; self.n_sigma];
                s.iter().for_each(|x| v[x.next] += x.prob);
                v
            }
        }
    }

    /// `R̂'(σ,a) = Σ_{σ'} T̂ R̂`.
    pub fn expected_reward(&self, sigma: usize, action: usize) -> f64 {
        match self.row(sigma, action) {
            Row::Uniform => self.fallback_reward,
            Row::Empirical(s) => s.iter().map(|x| x.prob * x.reward).sum(),
        }
    }

    /// Largest `|R̂|` appearing in any backup.
    pub fn reward_bound(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| match r {
                Row::Uniform => vec![self.fallback_reward.abs()],
                Row::Empirical(s) => s.iter().map(|x| x.reward.abs()).collect(),
            })
            .fold(self.fallback_reward.abs(), f64::max)
    }

    /// `Σ T̂ (R̂ + Γ v)`; `v_mean` is the mean of `v`, used by uniform rows.
    #[inline]
    fn backup(&self, sigma: usize, action: usize, v: &[f64], v_mean: f64) -> f64 {
        match self.row(sigma, action) {
            Row::Uniform => self.fallback_reward + self.gamma * v_mean,
            Row::Empirical(s) => s
                .iter()
                .map(|x| x.prob * (x.reward + self.gamma * v[x.next]))
                .sum(),
        }
    }

    /// One-step backup of `v` for every `(σ,a)`.
    pub fn backup_all(&self, v: &[f64]) -> QTable {
        let v_mean = mean(v);
        let q = (0..self.n_sigma * self.n_actions)
            .map(|i| self.backup(i / self.n_actions, i % self.n_actions, v, v_mean))
            .collect();
        QTable {
            n_actions: self.n_actions,
            q,
        }
    }

    /// Sweeps guaranteed to reach `tol` by Γ-contraction from `Q_0 = 0`.
    pub fn iteration_bound(&self, tol: f64) -> usize {
        let rb = self.reward_bound();
        if self.gamma == 0.0 || rb == 0.0 {
            return 2;
        }
        let v_range = rb / (1.0 - self.gamma);
        let k = (tol * (1.0 - self.gamma) / v_range).ln() / self.gamma.ln();
        k.ceil().max(0.0) as usize + 2
    }

    /// Jacobi value iteration until `‖Q_{k+1} − Q_k‖_∞ ≤ tol`.
    pub fn value_iteration(&self, tol: f64, max_iters: usize) -> Result<Solution> {
        if !(tol > 0.0) {
            return Err(Error::Config(format!("tolerance {tol} must be positive")));
        }
        let mut v = vec![0.0; self.n_sigma];
        let mut q = QTable {
            n_actions: self.n_actions,
            q: vec![0.0; self.n_sigma * self.n_actions],
        };
        let mut residuals = Vec::new();
        for _ in 0..max_iters {
            let next = self.backup_all(&v);
            let res = next
                .q
                .iter()
                .zip(&q.q)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            residuals.push(res);
            v = next.values().0;
            q = next;
            if res <= tol {
                let policy = TabularPolicy {
                    mapping: self.mapping.clone(),
                    actions: q.greedy(),
                };
                return Ok(Solution {
                    v: ValueTable(v),
                    q,
                    policy,
                    residuals,
                });
            }
        }
        Err(Error::NoConvergence(max_iters))
    }

    /// Value iteration at `tol` with the contraction bound as iteration cap.
    pub fn solve(&self, tol: f64) -> Result<Solution> {
        self.value_iteration(tol, self.iteration_bound(tol))
    }

    /// `V^π` as the fixed point of the linear Bellman equation, to a
    /// sup-norm error below `EVAL_TOL`.
    pub fn policy_evaluation(&self, policy: &TabularPolicy) -> Result<ValueTable> {
        if policy.actions.len() != self.n_sigma
            || policy.actions.iter().any(|&a| a >= self.n_actions)
        {
            return Err(Error::DimensionMismatch("policy does not cover Σ".into()));
        }
        let stop = EVAL_TOL * (1.0 - self.gamma);
        let cap = self.iteration_bound(stop).max(10);
        let mut v = vec![0.0; self.n_sigma];
        for _ in 0..cap {
            let v_mean = mean(&v);
            let next: Vec<f64> = (0..self.n_sigma)
                .map(|s| self.backup(s, policy.actions[s], &v, v_mean))
                .collect();
            let res = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v = next;
            if res <= stop {
                return Ok(ValueTable(v));
            }
        }
        Err(Error::NoConvergence(cap))
    }

    /// `Q^π(σ,a)` from `V^π`.
    pub fn q_of_policy(&self, policy: &TabularPolicy) -> Result<QTable> {
        let v = self.policy_evaluation(policy)?;
        Ok(self.backup_all(&v.0))
    }

    /// `Σ_σ p_0(σ) v(σ)`.
    pub fn initial_value(&self, v: &ValueTable) -> f64 {
        self.initial.iter().map(|&(s, p)| p * v.0[s]).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_model()).expect("mdp serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_json_model(serde_json::from_str(s)?)
    }

    fn to_json_model(&self) -> MdpJson {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| match r {
                Row::Uniform => None,
                Row::Empirical(s) => Some(RowJson {
                    sigma: i / self.n_actions,
                    action: i % self.n_actions,
                    weight: self.row_weight[i],
                    next: s
                        .iter()
                        .map(|x| (x.next, x.prob, x.reward, x.weight))
                        .collect(),
                }),
            })
            .collect();
        MdpJson {
            mapping: self.mapping.clone(),
            n_sigma: self.n_sigma,
            n_actions: self.n_actions,
            gamma_train: self.gamma,
            fallback_reward: self.fallback_reward,
            n_l: self.n_l,
            n_trajectories: self.n_trajectories,
            initial: self.initial.clone(),
            rows,
        }
    }

    fn from_json_model(j: MdpJson) -> Result<Self> {
        check_gamma(j.gamma_train)?;
        let n = j.n_sigma * j.n_actions;
        let mut rows = vec![Row::Uniform; n];
        let mut row_weight = vec![0.0; n];
        for r in j.rows {
            if r.sigma >= j.n_sigma
                || r.action >= j.n_actions
                || r.next.iter().any(|x| x.0 >= j.n_sigma)
            {
                return Err(Error::OutOfRange(format!(
                    "row ({}, {})",
                    r.sigma, r.action
                )));
            }
            let sum: f64 = r.next.iter().map(|x| x.1).sum();
            if (sum - 1.0).abs() > crate::pomdp::SIMPLEX_TOL {
                return Err(Error::NonStochasticRow {
                    kind: crate::error::RowKind::Transition,
                    index: vec![r.sigma, r.action],
                    sum,
                });
            }
            let i = r.sigma * j.n_actions + r.action;
            row_weight[i] = r.weight;
            rows[i] = Row::Empirical(
                r.next
                    .into_iter()
                    .map(|(next, prob, reward, weight)| Successor {
                        next,
                        prob,
                        reward,
                        weight,
                    })
                    .collect(),
            );
        }
        Ok(Self {
            mapping: j.mapping,
            n_sigma: j.n_sigma,
            n_actions: j.n_actions,
            gamma: j.gamma_train,
            fallback_reward: j.fallback_reward,
            rows,
            row_weight,
            initial: j.initial,
            n_trajectories: j.n_trajectories,
            n_l: j.n_l,
        })
    }
}

/// Sparse JSON layout: only observed rows are listed, as
/// `[σ', T̂, R̂, count]` tuples.
#[derive(Serialize, Deserialize)]
struct MdpJson {
    mapping: String,
    n_sigma: usize,
    n_actions: usize,
    gamma_train: f64,
    fallback_reward: f64,
    n_l: usize,
    n_trajectories: Option<usize>,
    initial: Vec<(usize, f64)>,
    rows: Vec<RowJson>,
}

#[derive(Serialize, Deserialize)]
struct RowJson {
    sigma: usize,
    action: usize,
    weight: f64,
    next: Vec<(usize, f64, f64, f64)>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::phi_h;

    fn traj(init: usize, steps: &[(usize, f64, usize)]) -> Trajectory {
        Trajectory {
            initial_obs: init,
            actions: steps.iter().map(|s| s.0).collect(),
            rewards: steps.iter().map(|s| s.1).collect(),
            obs: steps.iter().map(|s| s.2).collect(),
        }
    }

    #[test]
    fn frequencies_and_fallbacks() {
        let m = phi_h(1, 3, 2).unwrap();
        // from ω0 under a0: three times to ω1, once to ω2
        let ds = Dataset::new(vec![
            traj(0, &[(0, 1.0, 1)]),
            traj(0, &[(0, 3.0, 1)]),
            traj(0, &[(0, 2.0, 1)]),
            traj(0, &[(0, 6.0, 2)]),
        ]);
        let mdp = AugmentedMdp::fit(&ds, &m, 0.9).unwrap();
        assert_eq!(mdp.t_hat(0, 0, 1), 0.75);
        assert_eq!(mdp.t_hat(0, 0, 2), 0.25);
        assert_eq!(mdp.r_hat(0, 0, 1), 2.0);
        assert_eq!(mdp.fallback_reward(), 3.0);
        assert_eq!(mdp.r_hat(0, 0, 0), 3.0);
        assert_eq!(mdp.t_hat(1, 1, 2), 1.0 / 3.0);
        assert!(!mdp.is_observed(1, 0));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let m = phi_h(1, 3, 2).unwrap();
        assert!(matches!(
            AugmentedMdp::fit(&Dataset::new(vec![]), &m, 0.9),
            Err(Error::EmptyDataset)
        ));
        let ds = Dataset::new(vec![traj(0, &[(0, 1.0, 1)])]);
        assert!(matches!(
            AugmentedMdp::fit(&ds, &m, 1.0),
            Err(Error::GammaOutOfRange(_))
        ));
    }

    #[test]
    fn self_loop_value() {
        for g in [0.5, 0.95, 0.98] {
            let mdp = AugmentedMdp::from_dense(1, 1, &[1.0], &[1.0], g).unwrap();
            let sol = mdp.solve(1e-12).unwrap();
            assert!((sol.v.0[0] - 1.0 / (1.0 - g)).abs() < 1e-9);
            for w in sol.residuals.windows(2) {
                // differences of O(1/(1-Γ)) values carry rounding of a few ulps
                assert!(w[1] <= g * w[0] + 8.0 * f64::EPSILON / (1.0 - g));
            }
        }
    }

    #[test]
    fn zero_rewards_pick_action_zero() {
        let t = vec![0.5; 2 * 3 * 2];
        let mdp = AugmentedMdp::from_dense(2, 3, &t, &[0.0; 12], 0.9).unwrap();
        let sol = mdp.solve(DEFAULT_TOL).unwrap();
        assert_eq!(sol.v.0, vec![0.0, 0.0]);
        assert_eq!(sol.policy.actions, vec![0, 0]);
    }

    #[test]
    fn constant_reward_evaluation() {
        let t = vec![0.5; 8];
        let mdp = AugmentedMdp::from_dense(2, 2, &t, &[2.0; 8], 0.9).unwrap();
        let v = mdp
            .policy_evaluation(&TabularPolicy {
                mapping: "dense".into(),
                actions: vec![1, 0],
            })
            .unwrap();
        for x in v.0 {
            assert!((x - 20.0).abs() < 1e-9);
        }
    }

    #[test]
    fn json_round_trip() {
        let m = phi_h(2, 2, 2).unwrap();
        let ds = Dataset::new(vec![traj(1, &[(0, 0.5, 1), (1, -0.25, 0)])]);
        let mdp = AugmentedMdp::fit(&ds, &m, 0.95).unwrap();
        let back = AugmentedMdp::from_json(&mdp.to_json()).unwrap();
        assert_eq!(mdp, back);
        let sol = mdp.solve(DEFAULT_TOL).unwrap();
        let pj = sol.policy.to_json(&m);
        assert_eq!(TabularPolicy::from_json(&pj, &m).unwrap(), sol.policy);
    }
}
