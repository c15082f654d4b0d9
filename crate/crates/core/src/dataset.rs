//! Trajectory datasets sampled under a fixed behaviour policy.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomdp::{sample_categorical, History, InitialDistribution, Pomdp, Step};
use crate::seed;

/// Behaviour policy that ignores the history.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingPolicy {
    #[default]
    Uniform,
    Categorical {
        probs: Vec<f64>,
    },
}

impl SamplingPolicy {
    pub fn validate(&self, n_actions: usize) -> Result<()> {
        if let SamplingPolicy::Categorical { probs } = self {
            if probs.len() != n_actions {
                return Err(Error::DimensionMismatch(format!(
                    "sampling policy has {} probabilities for {n_actions} actions",
                    probs.len()
                )));
            }
            if probs.iter().any(|&p| !(p > 0.0)) {
                return Err(Error::Config(
                    "sampling policy must give every action positive probability".into(),
                ));
            }
            let z: f64 = probs.iter().sum();
            if (z - 1.0).abs() > crate::pomdp::SIMPLEX_TOL {
                return Err(Error::Config(format!("sampling policy sums to {z}")));
            }
        }
        Ok(())
    }

    pub fn probs(&self, n_actions: usize) -> Vec<f64> {
        match self {
            SamplingPolicy::Uniform => vec![1.0 / n_actions as f64; n_actions],
            SamplingPolicy::Categorical { probs } => probs.clone(),
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, n_actions: usize, rng: &mut R) -> usize {
        match self {
            SamplingPolicy::Uniform => rng.gen_range(0..n_actions),
            SamplingPolicy::Categorical { probs } => sample_categorical(probs, rng),
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            SamplingPolicy::Uniform => "uniform".into(),
            SamplingPolicy::Categorical { probs } => {
                let p: Vec<String> = probs.iter().map(|p| p.to_string()).collect();
                format!("categorical:{}", p.join(","))
            }
        }
    }
}

/// One observed trajectory. `obs[t]` is emitted after `actions[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    #[serde(rename = "init_obs")]
    pub initial_obs: usize,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub obs: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// History after the first `t` steps.
    pub fn history(&self, t: usize) -> History {
        History {
            initial_obs: self.initial_obs,
            steps: (0..t)
                .map(|i| Step {
                    action: self.actions[i],
                    reward: self.rewards[i],
                    obs: self.obs[i],
                })
                .collect(),
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.rewards.len() != self.actions.len() || self.obs.len() != self.actions.len() {
            return Err(format!(
                "actions/rewards/obs lengths differ ({}/{}/{})",
                self.actions.len(),
                self.rewards.len(),
                self.obs.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub pomdp: Option<String>,
    pub policy: String,
    pub n_tr: usize,
    pub n_l: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        let meta = DatasetMeta {
            pomdp: None,
            policy: String::new(),
            n_tr: trajectories.len(),
            n_l: trajectories.first().map_or(0, Trajectory::len),
            seed: None,
        };
        Self { trajectories, meta }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.trajectories {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_jsonl_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Parse one trajectory per line. Blank lines are skipped.
    pub fn read_jsonl<R: Read>(r: R) -> Result<Dataset> {
        let mut trajectories = Vec::new();
        let mut n_l = None;
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let t: Trajectory =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            t.check().map_err(parse_err)?;
            match n_l {
                None => n_l = Some(t.len()),
                Some(n) if n != t.len() => {
                    return Err(parse_err(format!(
                        "trajectory length {} differs from {n}",
                        t.len()
                    )))
                }
                _ => {}
            }
            trajectories.push(t);
        }
        Ok(Dataset::new(trajectories))
    }

    pub fn read_jsonl_path(path: impl AsRef<Path>) -> Result<Dataset> {
        Self::read_jsonl(File::open(path)?)
    }

    /// Largest observation and action ids plus one.
    pub fn id_bounds(&self) -> (usize, usize) {
        let mut n_obs = 0;
        let mut n_actions = 0;
        for t in &self.trajectories {
            n_obs = n_obs.max(t.initial_obs + 1);
            n_obs = t.obs.iter().fold(n_obs, |m, &w| m.max(w + 1));
            n_actions = t.actions.iter().fold(n_actions, |m, &a| m.max(a + 1));
        }
        (n_obs, n_actions)
    }
}

fn sample_trajectory(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    policy: &SamplingPolicy,
    n_l: usize,
    rng: &mut seed::Rng,
    states: Option<&mut Vec<usize>>,
) -> Trajectory {
    let mut s = sample_categorical(init.probs(), rng);
    let initial_obs = sample_categorical(pomdp.o_row(s), rng);
    let mut actions = Vec::with_capacity(n_l);
    let mut rewards = Vec::with_capacity(n_l);
    let mut obs = Vec::with_capacity(n_l);
    let mut trace = states;
    if let Some(v) = trace.as_deref_mut() {
        v.push(s);
    }
    for _ in 0..n_l {
        let a = policy.sample(pomdp.n_actions(), rng);
        let (next, r, w) = pomdp.step_unchecked(s, a, rng);
        actions.push(a);
        rewards.push(r);
        obs.push(w);
        s = next;
        if let Some(v) = trace.as_deref_mut() {
            v.push(s);
        }
    }
    Trajectory {
        initial_obs,
        actions,
        rewards,
        obs,
    }
}

fn check_sampling_args(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    policy: &SamplingPolicy,
    n_tr: usize,
    n_l: usize,
) -> Result<()> {
    if n_tr == 0 || n_l == 0 {
        return Err(Error::Config(format!(
            "n_tr = {n_tr} and n_l = {n_l} must both be at least 1"
        )));
    }
    if init.probs().len() != pomdp.n_states() {
        return Err(Error::DimensionMismatch("initial distribution size".into()));
    }
    policy.validate(pomdp.n_actions())
}

/// Sample `n_tr` trajectories of `n_l` steps. Trajectory `i` uses a stream
/// derived from `(master, i)` so the result does not depend on scheduling.
pub fn sample_dataset_seeded(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    policy: &SamplingPolicy,
    n_tr: usize,
    n_l: usize,
    master: u64,
) -> Result<Dataset> {
    sample_range(pomdp, init, policy, 0..n_tr, n_l, master).map(|trajectories| Dataset {
        trajectories,
        meta: DatasetMeta {
            pomdp: Some(pomdp.fingerprint()),
            policy: policy.descriptor(),
            n_tr,
            n_l,
            seed: Some(master),
        },
    })
}

/// Trajectories with indices in `range`, identical to the corresponding
/// slice of `sample_dataset_seeded` with the same master seed. Lets callers
/// stream very large datasets in chunks.
pub fn sample_range(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    policy: &SamplingPolicy,
    range: std::ops::Range<usize>,
    n_l: usize,
    master: u64,
) -> Result<Vec<Trajectory>> {
    check_sampling_args(pomdp, init, policy, range.len().max(1), n_l)?;
    Ok(range
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::derived_rng(master, &[seed::tag::TRAJECTORY, i as u64]);
            sample_trajectory(pomdp, init, policy, n_l, &mut rng, None)
        })
        .collect())
}

/// Draw a master seed from `rng`, then sample as in `sample_dataset_seeded`.
pub fn sample_dataset<R: Rng + ?Sized>(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    policy: &SamplingPolicy,
    n_tr: usize,
    n_l: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let master = rng.gen();
    sample_dataset_seeded(pomdp, init, policy, n_tr, n_l, master)
}

/// Same trajectories as `sample_dataset_seeded`, plus the hidden state
/// sequences (length `n_l + 1`). For test oracles only.
pub fn sample_dataset_debug(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    policy: &SamplingPolicy,
    n_tr: usize,
    n_l: usize,
    master: u64,
) -> Result<(Dataset, Vec<Vec<usize>>)> {
    check_sampling_args(pomdp, init, policy, n_tr, n_l)?;
    let (trajectories, states): (Vec<_>, Vec<_>) = (0..n_tr)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::derived_rng(master, &[seed::tag::TRAJECTORY, i as u64]);
            let mut states = Vec::with_capacity(n_l + 1);
            let t = sample_trajectory(pomdp, init, policy, n_l, &mut rng, Some(&mut states));
            (t, states)
        })
        .unzip();
    let mut ds = Dataset::new(trajectories);
    ds.meta = DatasetMeta {
        pomdp: Some(pomdp.fingerprint()),
        policy: policy.descriptor(),
        n_tr,
        n_l,
        seed: Some(master),
    };
    Ok((ds, states))
}

/// Write the debug sidecar: one `{"states":[...]}` object per line.
pub fn write_states_sidecar<W: Write>(states: &[Vec<usize>], mut w: W) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        states: &'a [usize],
    }
    for s in states {
        serde_json::to_writer(&mut w, &Line { states: s })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Trajectory-level split. The train side gets `ceil(n * train_fraction)`
/// trajectories, clamped so both sides are non-empty.
pub fn split<R: Rng + ?Sized>(
    dataset: &Dataset,
    train_fraction: f64,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::TooFewTrajectories(n));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n_train = ((n as f64 * train_fraction).ceil() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let (a, b) = idx.split_at(n_train);
    let pick = |ids: &[usize]| {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        let mut d = Dataset::new(
            ids.iter()
                .map(|&i| dataset.trajectories[i].clone())
                .collect(),
        );
        d.meta.pomdp.clone_from(&dataset.meta.pomdp);
        d.meta.policy.clone_from(&dataset.meta.policy);
        d.meta.seed = dataset.meta.seed;
        d
    };
    Ok((pick(a), pick(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::fixture;

    #[test]
    fn chain2_single_step_follows_dynamics() {
        let p = fixture("chain2").unwrap();
        let d = sample_dataset_seeded(&p, p.init(), &SamplingPolicy::Uniform, 50, 1, 3).unwrap();
        for t in &d.trajectories {
            assert_eq!(t.initial_obs, 0);
            let (s2, r) = if t.actions[0] == 0 {
                (1, 0.0)
            } else {
                (0, 0.0)
            };
            assert_eq!((t.obs[0], t.rewards[0]), (s2, r));
        }
    }

    #[test]
    fn zero_length_is_rejected() {
        let p = fixture("chain2").unwrap();
        assert!(sample_dataset_seeded(&p, p.init(), &SamplingPolicy::Uniform, 2, 0, 3).is_err());
    }

    #[test]
    fn debug_variant_matches_plain_sampling() {
        let p = fixture("identity_obs_5").unwrap();
        let d = sample_dataset_seeded(&p, p.init(), &SamplingPolicy::Uniform, 7, 9, 11).unwrap();
        let (d2, states) =
            sample_dataset_debug(&p, p.init(), &SamplingPolicy::Uniform, 7, 9, 11).unwrap();
        assert_eq!(d, d2);
        for (t, s) in d.trajectories.iter().zip(&states) {
            assert_eq!(s.len(), 10);
            assert_eq!(t.initial_obs, s[0]);
            assert_eq!(t.obs, s[1..]);
        }
    }

    #[test]
    fn split_sizes() {
        let p = fixture("chain2").unwrap();
        let mut rng = seed::rng(0);
        let d = sample_dataset_seeded(&p, p.init(), &SamplingPolicy::Uniform, 20, 3, 1).unwrap();
        let (a, b) = split(&d, 0.5, &mut rng).unwrap();
        assert_eq!((a.len(), b.len()), (10, 10));
        let d3 = Dataset::new(d.trajectories[..3].to_vec());
        let (a, b) = split(&d3, 0.5, &mut rng).unwrap();
        assert_eq!((a.len(), b.len()), (2, 1));
        let d1 = Dataset::new(d.trajectories[..1].to_vec());
        assert!(matches!(
            split(&d1, 0.5, &mut rng),
            Err(Error::TooFewTrajectories(1))
        ));
    }

    #[test]
    fn categorical_policy_needs_positive_mass() {
        let bad = SamplingPolicy::Categorical {
            probs: vec![1.0, 0.0],
        };
        assert!(bad.validate(2).is_err());
        let ok = SamplingPolicy::Categorical {
            probs: vec![0.25, 0.75],
        };
        ok.validate(2).unwrap();
    }

    #[test]
    fn jsonl_round_trip_and_truncation() {
        let p = fixture("uninformative_obs").unwrap();
        let d = sample_dataset_seeded(&p, p.init(), &SamplingPolicy::Uniform, 4, 5, 2).unwrap();
        let mut buf = Vec::new();
        d.write_jsonl(&mut buf).unwrap();
        let back = Dataset::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back.trajectories, d.trajectories);

        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.len() - 10];
        match Dataset::read_jsonl(cut.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
