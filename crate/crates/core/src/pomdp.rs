//! Finite POMDPs: representation, simulation and exact belief filtering.
//!
//! Tables are stored flat in row-major `[s][a][s']` / `[s][ω]` order. The
//! observation emitted after a transition is drawn from the arrival state,
//! and the initial observation from `s_0`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowKind};

/// Tolerance for simplex checks.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Distribution over initial hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InitialDistribution(pub Vec<f64>);

impl InitialDistribution {
    pub fn uniform(n_states: usize) -> Self {
        Self(vec![1.0 / n_states as f64; n_states])
    }

    pub fn point(n_states: usize, state: usize) -> Self {
        let mut p = vec![0.0; n_states];
        p[state] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

/// Posterior over hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeliefState(pub Vec<f64>);

impl BeliefState {
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn l1_distance(&self, other: &BeliefState) -> f64 {
        l1(&self.0, &other.0)
    }
}

pub(crate) fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// One observable step: the action taken, the reward received and the
/// observation emitted by the arrival state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: usize,
    pub reward: f64,
    pub obs: usize,
}

/// An observable history `ω_0 (a_0 r_0 ω_1) ... (a_{t-1} r_{t-1} ω_t)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub initial_obs: usize,
    pub steps: Vec<Step>,
}

impl History {
    pub fn new(initial_obs: usize) -> Self {
        Self {
            initial_obs,
            steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, action: usize, reward: f64, obs: usize) {
        self.steps.push(Step {
            action,
            reward,
            obs,
        });
    }

    pub fn extended(&self, action: usize, reward: f64, obs: usize) -> History {
        let mut h = self.clone();
        h.push(action, reward, obs);
        h
    }

    /// Observation currently seen (the last one emitted).
    pub fn current_obs(&self) -> usize {
        self.steps.last().map_or(self.initial_obs, |s| s.obs)
    }
}

/// A finite POMDP `(S, A, Ω, T, R, O, γ)` with its initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Pomdp {
    n_states: usize,
    n_actions: usize,
    n_obs: usize,
    gamma: f64,
    r_max: f64,
    transition: Vec<f64>,
    reward: Vec<f64>,
    obs: Vec<f64>,
    init: InitialDistribution,
}

/// On-disk JSON layout, nested `[s][a][s']`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PomdpJson {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_obs: usize,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
    pub obs: Vec<Vec<f64>>,
    pub init: Vec<f64>,
}

impl Pomdp {
    /// Build from flat row-major tables and validate.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        n_obs: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        obs: Vec<f64>,
        init: InitialDistribution,
        gamma: f64,
    ) -> Result<Self> {
        let r_max = reward_range(&reward);
        let p = Self::from_parts(
            n_states, n_actions, n_obs, transition, reward, obs, init, gamma, r_max,
        )?;
        p.validate()?;
        Ok(p)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        n_states: usize,
        n_actions: usize,
        n_obs: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        obs: Vec<f64>,
        init: InitialDistribution,
        gamma: f64,
        r_max: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || n_obs == 0 {
            return Err(Error::DimensionMismatch(
                "state, action and observation counts must be positive".into(),
            ));
        }
        let sas = n_states * n_actions * n_states;
        if transition.len() != sas || reward.len() != sas {
            return Err(Error::DimensionMismatch(format!(
                "transition/reward tables need {sas} entries, got {}/{}",
                transition.len(),
                reward.len()
            )));
        }
        if obs.len() != n_states * n_obs {
            return Err(Error::DimensionMismatch(format!(
                "observation table needs {} entries, got {}",
                n_states * n_obs,
                obs.len()
            )));
        }
        if init.0.len() != n_states {
            return Err(Error::DimensionMismatch(format!(
                "initial distribution has {} entries for {n_states} states",
                init.0.len()
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            n_obs,
            gamma,
            r_max,
            transition,
            reward,
            obs,
            init,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    /// Width of the reward range.
    pub fn r_max(&self) -> f64 {
        self.r_max
    }
    pub fn init(&self) -> &InitialDistribution {
        &self.init
    }

    #[inline]
    pub fn t(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s2]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.reward[(s * self.n_actions + a) * self.n_states + s2]
    }

    #[inline]
    pub fn o(&self, s: usize, w: usize) -> f64 {
        self.obs[s * self.n_obs + w]
    }

    /// `T[s][a][·]`
    #[inline]
    pub fn t_row(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.n_actions + a) * self.n_states;
        &self.transition[i..i + self.n_states]
    }

    #[inline]
    pub fn r_row(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.n_actions + a) * self.n_states;
        &self.reward[i..i + self.n_states]
    }

    /// `O[s][·]`
    #[inline]
    pub fn o_row(&self, s: usize) -> &[f64] {
        &self.obs[s * self.n_obs..(s + 1) * self.n_obs]
    }

    /// Expected one-step reward `Σ_{s'} T(s,a,s') R(s,a,s')`.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.t_row(s, a)
            .iter()
            .zip(self.r_row(s, a))
            .map(|(p, r)| p * r)
            .sum()
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        self.reward
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                (lo.min(r), hi.max(r))
            })
    }

    /// Check every stochastic-table invariant.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                check_row(self.t_row(s, a), RowKind::Transition, vec![s, a])?;
            }
        }
        for s in 0..self.n_states {
            check_row(self.o_row(s), RowKind::Observation, vec![s])?;
        }
        check_row(&self.init.0, RowKind::Initial, vec![])?;
        if let Some(r) = self.reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::Config(format!("non-finite reward {r}")));
        }
        let (lo, hi) = self.reward_bounds();
        if !(self.r_max.is_finite() && self.r_max >= 0.0 && hi - lo <= self.r_max + 1e-12) {
            return Err(Error::Config(format!(
                "r_max {} smaller than the reward range {}",
                self.r_max,
                hi - lo
            )));
        }
        Ok(())
    }

    fn check_ids(
        &self,
        state: Option<usize>,
        action: Option<usize>,
        obs: Option<usize>,
    ) -> Result<()> {
        if let Some(s) = state.filter(|&s| s >= self.n_states) {
            return Err(Error::OutOfRange(format!("state {s} of {}", self.n_states)));
        }
        if let Some(a) = action.filter(|&a| a >= self.n_actions) {
            return Err(Error::OutOfRange(format!(
                "action {a} of {}",
                self.n_actions
            )));
        }
        if let Some(w) = obs.filter(|&w| w >= self.n_obs) {
            return Err(Error::OutOfRange(format!(
                "observation {w} of {}",
                self.n_obs
            )));
        }
        Ok(())
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let s = sample_categorical(&self.init.0, rng);
        let w = sample_categorical(self.o_row(s), rng);
        (s, w)
    }

    /// Simulate one transition from `state` under `action`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: usize,
        action: usize,
        rng: &mut R,
    ) -> Result<(usize, f64, usize)> {
        self.check_ids(Some(state), Some(action), None)?;
        Ok(self.step_unchecked(state, action, rng))
    }

    #[inline]
    pub(crate) fn step_unchecked<R: Rng + ?Sized>(
        &self,
        state: usize,
        action: usize,
        rng: &mut R,
    ) -> (usize, f64, usize) {
        let next = sample_categorical(self.t_row(state, action), rng);
        let reward = self.r(state, action, next);
        let w = sample_categorical(self.o_row(next), rng);
        (next, reward, w)
    }

    /// Predicted next-state distribution `Σ_s b(s) T(s,a,·)`.
    pub fn predict(&self, belief: &[f64], action: usize) -> Vec<f64> {
        let mut next = vec![0.0; self.n_states];
        for (s, &b) in belief.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for (n, &p) in next.iter_mut().zip(self.t_row(s, action)) {
                *n += b * p;
            }
        }
        next
    }

    /// Exact Bayes posterior after taking `action` and seeing `obs`.
    pub fn belief_update(
        &self,
        belief: &BeliefState,
        action: usize,
        obs: usize,
    ) -> Result<BeliefState> {
        self.check_ids(None, Some(action), Some(obs))?;
        if belief.0.len() != self.n_states {
            return Err(Error::DimensionMismatch(format!(
                "belief has {} entries for {} states",
                belief.0.len(),
                self.n_states
            )));
        }
        let mut post = self.predict(&belief.0, action);
        for (s, p) in post.iter_mut().enumerate() {
            *p *= self.o(s, obs);
        }
        normalize_posterior(post, obs)
    }

    /// Posterior of `initial_obs` under `init`.
    pub fn initial_belief(
        &self,
        init: &InitialDistribution,
        initial_obs: usize,
    ) -> Result<BeliefState> {
        self.check_ids(None, None, Some(initial_obs))?;
        let post = init
            .0
            .iter()
            .enumerate()
            .map(|(s, &p)| p * self.o(s, initial_obs))
            .collect();
        normalize_posterior(post, initial_obs)
    }

    /// `b(·|H)`, folding the Bayes filter over the history. Rewards are not
    /// conditioned on.
    pub fn belief_of_history(
        &self,
        init: &InitialDistribution,
        history: &History,
    ) -> Result<BeliefState> {
        let mut b = self.initial_belief(init, history.initial_obs)?;
        for step in &history.steps {
            b = self.belief_update(&b, step.action, step.obs)?;
        }
        Ok(b)
    }

    /// Model-based reward and next-observation distribution for a belief.
    pub fn model_based_step(&self, belief: &BeliefState, action: usize) -> Result<(f64, Vec<f64>)> {
        self.check_ids(None, Some(action), None)?;
        let mut reward = 0.0;
        for (s, &b) in belief.0.iter().enumerate() {
            if b != 0.0 {
                reward += b * self.expected_reward(s, action);
            }
        }
        let next = self.predict(&belief.0, action);
        Ok((reward, self.observation_distribution(&next)))
    }

    /// `Σ_{s'} p(s') O(s', ·)`
    pub fn observation_distribution(&self, state_dist: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_obs];
        for (s, &p) in state_dist.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (o, &q) in out.iter_mut().zip(self.o_row(s)) {
                *o += p * q;
            }
        }
        out
    }

    pub fn to_json_model(&self) -> PomdpJson {
        let nest3 = |flat: &[f64]| -> Vec<Vec<Vec<f64>>> {
            flat.chunks(self.n_actions * self.n_states)
                .map(|sa| sa.chunks(self.n_states).map(<[f64]>::to_vec).collect())
                .collect()
        };
        PomdpJson {
            n_states: self.n_states,
            n_actions: self.n_actions,
            n_obs: self.n_obs,
            gamma: self.gamma,
            r_max: Some(self.r_max),
            transition: nest3(&self.transition),
            reward: nest3(&self.reward),
            obs: self.obs.chunks(self.n_obs).map(<[f64]>::to_vec).collect(),
            init: self.init.0.clone(),
        }
    }

    pub fn from_json_model(j: PomdpJson) -> Result<Self> {
        let flat3 = |t: Vec<Vec<Vec<f64>>>, what: &str| -> Result<Vec<f64>> {
            if t.len() != j.n_states
                || t.iter().any(|sa| {
                    sa.len() != j.n_actions || sa.iter().any(|row| row.len() != j.n_states)
                })
            {
                return Err(Error::DimensionMismatch(format!(
                    "{what} must be [n_states][n_actions][n_states]"
                )));
            }
            Ok(t.into_iter().flatten().flatten().collect())
        };
        let transition = flat3(j.transition, "transition")?;
        let reward = flat3(j.reward, "reward")?;
        if j.obs.len() != j.n_states || j.obs.iter().any(|r| r.len() != j.n_obs) {
            return Err(Error::DimensionMismatch(
                "obs must be [n_states][n_obs]".into(),
            ));
        }
        let obs = j.obs.into_iter().flatten().collect();
        let r_max = j.r_max.unwrap_or_else(|| reward_range(&reward));
        let p = Self::from_parts(
            j.n_states,
            j.n_actions,
            j.n_obs,
            transition,
            reward,
            obs,
            InitialDistribution(j.init),
            j.gamma,
            r_max,
        )?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_model()).expect("pomdp serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_json_model(serde_json::from_str(s)?)
    }

    /// Short stable fingerprint of the model tables.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in [self.n_states, self.n_actions, self.n_obs] {
            h.update((v as u64).to_le_bytes());
        }
        for x in self
            .transition
            .iter()
            .chain(&self.reward)
            .chain(&self.obs)
            .chain(&self.init.0)
            .chain(std::iter::once(&self.gamma))
        {
            h.update(x.to_le_bytes());
        }
        h.finalize()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn reward_range(reward: &[f64]) -> f64 {
    let (lo, hi) = reward
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
            (lo.min(r), hi.max(r))
        });
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

fn check_row(row: &[f64], kind: RowKind, index: Vec<usize>) -> Result<()> {
    if let Some(&value) = row.iter().find(|&&p| p < 0.0 || p.is_nan()) {
        return Err(Error::NegativeProbability { kind, index, value });
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|&p| p > 1.0 + SIMPLEX_TOL) {
        return Err(Error::NonStochasticRow { kind, index, sum });
    }
    Ok(())
}

fn normalize_posterior(mut post: Vec<f64>, obs: usize) -> Result<BeliefState> {
    let z: f64 = post.iter().sum();
    if z <= 0.0 || !z.is_finite() {
        return Err(Error::ZeroProbabilityObservation { obs });
    }
    post.iter_mut().for_each(|p| *p /= z);
    Ok(BeliefState(post))
}

/// Inverse-CDF draw from a probability row.
#[inline]
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    // rounding: u landed in the last ulp above the cumulative sum
    last
}
