use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::SamplingPolicy;
use crate::error::{Error, Result};
use crate::mapping::HistoryMapping;
use crate::pomdp::{l1, History, InitialDistribution, Pomdp};

/// One enumerated history with its probability under the behaviour policy
/// and its exact belief.
#[derive(Debug, Clone)]
pub struct HistoryNode {
    pub history: History,
    pub prob: f64,
    pub belief: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HistorySet {
    pub horizon: usize,
    pub nodes: Vec<HistoryNode>,
    /// Enumerated probability mass per length `t = 0..=horizon`.
    pub layer_mass: Vec<f64>,
}

impl HistorySet {
    /// Mean over lengths of the enumerated mass (1 without pruning).
    pub fn coverage_mass(&self) -> f64 {
        self.layer_mass.iter().sum::<f64>() / self.layer_mass.len() as f64
    }
}

/// All histories of length `0..=horizon` reachable under `policy`, dropping
/// any history (and its descendants) whose probability is below
/// `prune_mass`. Histories are recorded with zero rewards.
pub fn enumerate_histories(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    policy: &SamplingPolicy,
    horizon: usize,
    prune_mass: f64,
    cap: usize,
) -> Result<HistorySet> {
    let na = pomdp.n_actions();
    policy.validate(na)?;
    if init.probs().len() != pomdp.n_states() {
        return Err(Error::DimensionMismatch("initial distribution size".into()));
    }
    let pa = policy.probs(na);
    let mut nodes = Vec::new();
    let mut layer_mass = vec![0.0; horizon + 1];
    let mut stack = Vec::new();
    let obs0 = pomdp.observation_distribution(init.probs());
    for (w, &p) in obs0.iter().enumerate().rev() {
        if p > 0.0 && p >= prune_mass {
            let b = pomdp.initial_belief(init, w)?;
            stack.push(HistoryNode {
                history: History::new(w),
                prob: p,
                belief: b.0,
            });
        }
    }
    while let Some(node) = stack.pop() {
        let t = node.history.len();
        layer_mass[t] += node.prob;
        if t < horizon {
            for a in (0..na).rev() {
                if pa[a] == 0.0 {
                    continue;
                }
                let pred = pomdp.predict(&node.belief, a);
                for w in (0..pomdp.n_obs()).rev() {
                    let mut post: Vec<f64> = pred
                        .iter()
                        .enumerate()
                        .map(|(s, &p)| p * pomdp.o(s, w))
                        .collect();
                    let pw: f64 = post.iter().sum();
                    let prob = node.prob * pa[a] * pw;
                    if !(pw > 0.0) || prob < prune_mass {
                        continue;
                    }
                    post.iter_mut().for_each(|x| *x /= pw);
                    stack.push(HistoryNode {
                        history: node.history.extended(a, 0.0, w),
                        prob,
                        belief: post,
                    });
                }
            }
        }
        nodes.push(node);
        if nodes.len() + stack.len() > cap {
            return Err(Error::HorizonTooLarge {
                horizon,
                size: nodes.len() + stack.len(),
                cap,
            });
        }
    }
    Ok(HistorySet {
        horizon,
        nodes,
        layer_mass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub mapping: String,
    pub horizon: usize,
    pub epsilon: f64,
    /// `‖b_φ(φ(H)) − b(H)‖₁` per enumerated history.
    pub gaps: Vec<f64>,
    pub n_histories: usize,
    pub n_clusters: usize,
    pub coverage_mass: f64,
    pub prune_mass: f64,
}

/// Cluster index, cluster belief `b_φ` and per-history gap for every node.
#[derive(Debug, Clone)]
pub struct Clusters {
    pub sigma: Vec<usize>,
    pub belief: HashMap<usize, Vec<f64>>,
    pub gaps: Vec<f64>,
}

/// `b_φ(σ)` is the probability-weighted mean belief of the enumerated
/// histories mapped to `σ`; `ε` is the largest gap to it.
pub fn epsilon_from_nodes(
    set: &HistorySet,
    mapping: &dyn HistoryMapping,
) -> Result<(f64, Clusters)> {
    if mapping.uses_rewards() {
        return Err(Error::Config(format!(
            "{} conditions on rewards; ε is defined over action-observation histories",
            mapping.descriptor()
        )));
    }
    let sigma: Vec<usize> = set
        .nodes
        .iter()
        .map(|n| mapping.apply_index(&n.history))
        .collect();
    let mut acc: HashMap<usize, (f64, Vec<f64>)> = HashMap::new();
    for (node, &sg) in set.nodes.iter().zip(&sigma) {
        let e = acc
            .entry(sg)
            .or_insert_with(|| (0.0, vec![0.0; node.belief.len()]));
        e.0 += node.prob;
        for (x, &b) in e.1.iter_mut().zip(&node.belief) {
            *x += node.prob * b;
        }
    }
    let belief: HashMap<usize, Vec<f64>> = acc
        .into_iter()
        .map(|(k, (w, mut v))| {
            v.iter_mut().for_each(|x| *x /= w);
            (k, v)
        })
        .collect();
    let gaps: Vec<f64> = set
        .nodes
        .iter()
        .zip(&sigma)
        .map(|(n, sg)| l1(&belief[sg], &n.belief))
        .collect();
    let eps = gaps.iter().copied().fold(0.0, f64::max);
    Ok((
        eps,
        Clusters {
            sigma,
            belief,
            gaps,
        },
    ))
}

/// Smallest `ε` such that every enumerated history of length `≤ horizon`
/// has belief within `ε` (L1) of its cluster belief.
pub fn epsilon_sufficiency(
    pomdp: &Pomdp,
    init: &InitialDistribution,
    policy: &SamplingPolicy,
    mapping: &dyn HistoryMapping,
    horizon: usize,
    prune_mass: f64,
) -> Result<EpsilonReport> {
    if mapping.n_obs() != pomdp.n_obs() || mapping.n_actions() != pomdp.n_actions() {
        return Err(Error::DimensionMismatch(
            "mapping does not match the model".into(),
        ));
    }
    let set = enumerate_histories(
        pomdp,
        init,
        policy,
        horizon,
        prune_mass,
        super::DEFAULT_HISTORY_CAP,
    )?;
    let (epsilon, clusters) = epsilon_from_nodes(&set, mapping)?;
    Ok(EpsilonReport {
        mapping: mapping.descriptor(),
        horizon,
        epsilon,
        n_histories: set.nodes.len(),
        n_clusters: clusters.belief.len(),
        gaps: clusters.gaps,
        coverage_mass: set.coverage_mass(),
        prune_mass,
    })
}
