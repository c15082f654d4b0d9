use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::dataset::{sample_dataset_seeded, SamplingPolicy};
use crate::error::Result;
use crate::evaluator::{decompose, model_value, Evaluation, RolloutConfig, Simulator};
use crate::mapping::{phi_full, HistoryMapping};
use crate::mdp::{AugmentedMdp, DEFAULT_TOL};
use crate::propagate::SuccessorTable;
use crate::seed;
use crate::theory::{
    bias_bound, epsilon_sufficiency, overfitting_bound, CheckReport, DEFAULT_PRUNE_MASS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub dataset: usize,
    /// Value of the policy inside the augmented MDP it was fitted from.
    pub model_value: f64,
    /// Value of the policy in the POMDP.
    pub real_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub mapping: String,
    pub gamma_train: f64,
    pub policies: Vec<PolicySnapshot>,
    /// Positions in `policies` of the best, median and worst real value.
    pub best: usize,
    pub median: usize,
    pub worst: usize,
    /// Fraction of policy pairs ranked differently by model and real value.
    pub inversion_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub experiment_id: String,
    pub pomdp_seed: u64,
    pub n_tr: usize,
    pub entries: Vec<SnapshotEntry>,
}

impl Snapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }
}

fn inversion_rate(policies: &[PolicySnapshot]) -> f64 {
    let (mut pairs, mut inv) = (0usize, 0usize);
    for (i, a) in policies.iter().enumerate() {
        for b in &policies[i + 1..] {
            let dm = a.model_value - b.model_value;
            let dr = a.real_value - b.real_value;
            if dm != 0.0 && dr != 0.0 {
                pairs += 1;
                if (dm > 0.0) != (dr > 0.0) {
                    inv += 1;
                }
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        inv as f64 / pairs as f64
    }
}

/// Fit `k_policies` policies on independent datasets of POMDP number
/// `pomdp_index` and record each one's model value and real value. The
/// datasets and evaluation streams match those of `run_sweep`.
pub fn run_distribution_snapshot(
    cfg: &ExperimentConfig,
    pomdp_index: usize,
    n_tr: usize,
    k_policies: usize,
) -> Result<Snapshot> {
    cfg.validate()?;
    if k_policies == 0 || n_tr == 0 {
        return Err(crate::Error::Config(
            "k_policies and n_tr must be positive".into(),
        ));
    }
    let pomdp = cfg.pomdp(pomdp_index)?;
    let specs = cfg.mapping_specs()?;
    let mut entries = Vec::new();
    for spec in &specs {
        let m = spec.build(pomdp.n_obs(), pomdp.n_actions(), pomdp.reward_bounds())?;
        let table = SuccessorTable::new(&m);
        let sim = Simulator::new(&pomdp, pomdp.init(), &m, &table)?;
        let per_dataset: Vec<Vec<(f64, f64)>> = (0..k_policies)
            .into_par_iter()
            .map(|d| {
                let path = [pomdp_index as u64, n_tr as u64, d as u64];
                let ds = sample_dataset_seeded(
                    &pomdp,
                    pomdp.init(),
                    &SamplingPolicy::Uniform,
                    n_tr,
                    cfg.rollout.horizon,
                    seed::derive(cfg.seed, &[&[seed::tag::DATA][..], &path].concat()),
                )?;
                let eval_seed = seed::derive(cfg.seed, &[&[seed::tag::EVAL][..], &path].concat());
                let base = AugmentedMdp::fit(&ds, &m, 0.0)?;
                cfg.gamma_train
                    .iter()
                    .map(|&g| {
                        let mdp = base.with_gamma(g)?;
                        let pol = mdp.solve(DEFAULT_TOL)?.policy;
                        let mv = model_value(
                            &mdp,
                            &pol.actions,
                            cfg.rollout.horizon,
                            cfg.rollout.discount_env,
                        );
                        let rv = sim.value(&pol.actions, &cfg.rollout, eval_seed).0;
                        Ok((mv, rv))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (gi, &g) in cfg.gamma_train.iter().enumerate() {
            let policies: Vec<PolicySnapshot> = per_dataset
                .iter()
                .enumerate()
                .map(|(d, v)| PolicySnapshot {
                    dataset: d,
                    model_value: v[gi].0,
                    real_value: v[gi].1,
                })
                .collect();
            let mut order: Vec<usize> = (0..policies.len()).collect();
            order.sort_by(|&a, &b| {
                policies[b]
                    .real_value
                    .total_cmp(&policies[a].real_value)
                    .then(a.cmp(&b))
            });
            entries.push(SnapshotEntry {
                mapping: spec.to_string(),
                gamma_train: g,
                best: order[0],
                median: order[(order.len() - 1) / 2],
                worst: order[order.len() - 1],
                inversion_rate: inversion_rate(&policies),
                policies,
            });
        }
    }
    Ok(Snapshot {
        experiment_id: cfg.experiment_id.clone(),
        pomdp_seed: cfg.pomdp_seed(pomdp_index),
        n_tr,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsCell {
    pub pomdp_seed: u64,
    pub mapping: String,
    pub gamma_train: f64,
    pub n_tr: usize,
    /// ε over histories of length at most `horizon`.
    pub epsilon: f64,
    pub coverage_mass: f64,
    pub r_max: f64,
    pub sigma_card: usize,
    /// Samples per `(σ, a)` fed to the overfitting bound.
    pub n_samples: usize,
    pub bias_bound: f64,
    pub measured_bias: f64,
    pub overfitting_bound: f64,
    pub measured_overfitting: f64,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub experiment_id: String,
    pub horizon: usize,
    pub delta: f64,
    pub reference: String,
    pub cells: Vec<BoundsCell>,
    pub bias: CheckReport,
    pub overfitting: CheckReport,
}

impl BoundsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Average number of samples per `(σ, a)` pair in `n_tr` trajectories of
/// `n_l` steps.
pub fn samples_per_pair(n_tr: usize, n_l: usize, sigma_card: usize, n_actions: usize) -> usize {
    (n_tr * n_l / (sigma_card * n_actions)).max(1)
}

const BOUND_TOL: f64 = 1e-9;

/// Horizon-capped bound-vs-measured table. Trajectories, evaluation and the
/// ε enumeration all use `bounds_horizon` steps; values are discounted by
/// the training discount; the reference mapping is the full history.
pub fn run_bounds_report(cfg: &ExperimentConfig) -> Result<BoundsReport> {
    cfg.validate()?;
    let h = cfg.bounds_horizon;
    let specs = cfg.mapping_specs()?;
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.n_pomdps)
        .flat_map(|i| {
            (0..specs.len()).flat_map(move |l| (0..cfg.gamma_train.len()).map(move |g| (i, l, g)))
        })
        .collect();
    let cells: Vec<Vec<BoundsCell>> = jobs
        .par_iter()
        .map(|&(i, l, gi)| {
            let g = cfg.gamma_train[gi];
            let pomdp = cfg.pomdp(i)?;
            let (no, na) = (pomdp.n_obs(), pomdp.n_actions());
            let m = specs[l].build(no, na, pomdp.reward_bounds())?;
            let reference = phi_full(h, no, na)?;
            let eps = epsilon_sufficiency(
                &pomdp,
                pomdp.init(),
                &SamplingPolicy::Uniform,
                &m,
                h,
                DEFAULT_PRUNE_MASS,
            )?;
            let rollout = RolloutConfig {
                horizon: h,
                discount_env: g,
                ..cfg.rollout.clone()
            };
            let bb = bias_bound(eps.epsilon, pomdp.r_max(), g)?;
            cfg.n_tr
                .iter()
                .enumerate()
                .map(|(k, &n_tr)| {
                    let mut rng = seed::derived_rng(
                        cfg.seed,
                        &[seed::tag::DATA, i as u64, gi as u64, k as u64],
                    );
                    let dec = decompose(
                        &pomdp,
                        pomdp.init(),
                        &reference,
                        &m,
                        g,
                        n_tr,
                        cfg.n_datasets,
                        &rollout,
                        &mut rng,
                    )?;
                    let n = samples_per_pair(n_tr, h, m.cardinality(), na);
                    Ok(BoundsCell {
                        pomdp_seed: cfg.pomdp_seed(i),
                        mapping: specs[l].to_string(),
                        gamma_train: g,
                        n_tr,
                        epsilon: eps.epsilon,
                        coverage_mass: eps.coverage_mass,
                        r_max: pomdp.r_max(),
                        sigma_card: m.cardinality(),
                        n_samples: n,
                        bias_bound: bb,
                        measured_bias: dec.bias,
                        overfitting_bound: overfitting_bound(
                            n,
                            pomdp.r_max(),
                            g,
                            m.cardinality(),
                            na,
                            cfg.delta,
                        )?,
                        measured_overfitting: dec.overfitting,
                        evaluation: dec.evaluation,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let cells: Vec<BoundsCell> = cells.into_iter().flatten().collect();
    let mut bias = CheckReport::new("bias_bound", BOUND_TOL);
    let mut overfitting = CheckReport::new("overfitting_bound", BOUND_TOL);
    for c in &cells {
        bias.record(c.measured_bias, c.bias_bound);
        overfitting.record(c.measured_overfitting, c.overfitting_bound);
        bias.coverage_mass = Some(
            bias.coverage_mass
                .map_or(c.coverage_mass, |m: f64| m.min(c.coverage_mass)),
        );
    }
    Ok(BoundsReport {
        experiment_id: cfg.experiment_id.clone(),
        horizon: h,
        delta: cfg.delta,
        reference: format!("phi_full:{h}"),
        cells,
        bias,
        overfitting,
    })
}
