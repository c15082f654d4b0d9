use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{csv_err, csv_hash_excluding, ExperimentConfig};
use crate::dataset::{sample_dataset_seeded, SamplingPolicy};
use crate::error::{Error, Result};
use crate::evaluator::{ExperimentStats, Simulator};
use crate::mapping::{HistoryMapping, WindowMapping};
use crate::mdp::{AugmentedMdp, DEFAULT_TOL};
use crate::pomdp::Pomdp;
use crate::propagate::SuccessorTable;
use crate::seed;
use crate::stats;

/// `pomdp_seed` value of aggregate rows.
pub const AGGREGATE_SEED: &str = "ALL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub pomdp_seed: String,
    pub mapping: String,
    pub gamma_train: f64,
    pub n_tr: usize,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub n_datasets: usize,
    pub wall_ms: u64,
    pub error: String,
}

impl ResultRow {
    pub fn is_aggregate(&self) -> bool {
        self.pomdp_seed == AGGREGATE_SEED
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub rows: Vec<ResultRow>,
    /// Per-dataset returns behind each row (empty for aggregates and errors).
    pub returns: Vec<Vec<f64>>,
}

impl Sweep {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Vec<ResultRow>> {
        csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .map(|r| r.map_err(csv_err))
            .collect()
    }

    /// Hash of the CSV without the timing column.
    pub fn determinism_hash(&self) -> Result<String> {
        csv_hash_excluding(&self.to_csv()?, "wall_ms")
    }

    pub fn data_rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| !r.is_aggregate())
    }

    pub fn aggregate(&self, mapping: &str, gamma: f64, n_tr: usize) -> Option<&ResultRow> {
        self.rows.iter().find(|r| {
            r.is_aggregate() && r.mapping == mapping && r.gamma_train == gamma && r.n_tr == n_tr
        })
    }

    /// Per-POMDP `(mu, sigma)` of one cell, in POMDP order; `None` for
    /// failed cells.
    pub fn per_pomdp(&self, mapping: &str, gamma: f64, n_tr: usize) -> Vec<Option<(f64, f64)>> {
        self.data_rows()
            .filter(|r| r.mapping == mapping && r.gamma_train == gamma && r.n_tr == n_tr)
            .map(|r| r.mu.zip(r.sigma))
            .collect()
    }
}

struct Instance {
    pomdp: Pomdp,
    mappings: Vec<WindowMapping>,
    tables: Vec<SuccessorTable>,
}

fn instance(cfg: &ExperimentConfig, index: usize) -> Result<Instance> {
    let pomdp = cfg.pomdp(index)?;
    let mappings = cfg
        .mapping_specs()?
        .iter()
        .map(|s| s.build(pomdp.n_obs(), pomdp.n_actions(), pomdp.reward_bounds()))
        .collect::<Result<Vec<_>>>()?;
    let tables = mappings
        .iter()
        .map(|m| SuccessorTable::new(m as &dyn HistoryMapping))
        .collect();
    Ok(Instance {
        pomdp,
        mappings,
        tables,
    })
}

type Outcome = (std::result::Result<f64, String>, f64);

/// Fit, solve and evaluate every `(mapping, Γ)` on dataset `d` of cell
/// `(pomdp, n_tr)`. Datasets and evaluation streams are shared by all
/// mappings and discounts.
fn run_unit(
    cfg: &ExperimentConfig,
    inst: &Instance,
    pomdp_index: usize,
    n_tr: usize,
    d: usize,
) -> Vec<Outcome> {
    let path = [pomdp_index as u64, n_tr as u64, d as u64];
    let data_seed = seed::derive(cfg.seed, &[&[seed::tag::DATA][..], &path].concat());
    let eval_seed = seed::derive(cfg.seed, &[&[seed::tag::EVAL][..], &path].concat());
    let n_cells = inst.mappings.len() * cfg.gamma_train.len();
    let ds = match sample_dataset_seeded(
        &inst.pomdp,
        inst.pomdp.init(),
        &SamplingPolicy::Uniform,
        n_tr,
        cfg.rollout.horizon,
        data_seed,
    ) {
        Ok(ds) => ds,
        Err(e) => return vec![(Err(e.to_string()), 0.0); n_cells],
    };
    let mut out = Vec::with_capacity(n_cells);
    for (m, table) in inst.mappings.iter().zip(&inst.tables) {
        let start = Instant::now();
        let base = AugmentedMdp::fit(&ds, m, 0.0);
        let fit_ms = start.elapsed().as_secs_f64() * 1e3 / cfg.gamma_train.len() as f64;
        for &g in &cfg.gamma_train {
            let start = Instant::now();
            let value = (|| -> Result<f64> {
                let mdp = match &base {
                    Ok(b) => b.with_gamma(g)?,
                    Err(e) => return Err(Error::Config(format!("fit failed: {e}"))),
                };
                let sol = mdp.solve(DEFAULT_TOL)?;
                let sim = Simulator::new(&inst.pomdp, inst.pomdp.init(), m, table)?;
                Ok(sim.value(&sol.policy.actions, &cfg.rollout, eval_seed).0)
            })();
            let ms = fit_ms + start.elapsed().as_secs_f64() * 1e3;
            out.push((value.map_err(|e| e.to_string()), ms));
        }
    }
    out
}

/// Full `pomdp × mapping × Γ × n_tr` sweep, followed by one aggregate row
/// per `(mapping, Γ, n_tr)` averaging `μ` and `σ` over POMDPs. A failing
/// cell becomes a row with an error message.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Sweep> {
    cfg.validate()?;
    let labels: Vec<String> = cfg.mapping_specs()?.iter().map(|s| s.to_string()).collect();
    let instances: Vec<Result<Instance>> = (0..cfg.n_pomdps)
        .into_par_iter()
        .map(|i| instance(cfg, i))
        .collect();
    let units: Vec<(usize, usize, usize)> = (0..cfg.n_pomdps)
        .flat_map(|i| {
            (0..cfg.n_tr.len()).flat_map(move |k| (0..cfg.n_datasets).map(move |d| (i, k, d)))
        })
        .filter(|&(i, _, _)| instances[i].is_ok())
        .collect();
    let outcomes: Vec<Vec<Outcome>> = units
        .par_iter()
        .map(|&(i, k, d)| {
            let inst = instances[i].as_ref().expect("filtered");
            run_unit(cfg, inst, i, cfg.n_tr[k], d)
        })
        .collect();
    let n_g = cfg.gamma_train.len();
    let per_pomdp_units = cfg.n_tr.len() * cfg.n_datasets;
    let mut offsets = vec![0usize; cfg.n_pomdps];
    let mut next = 0;
    for (i, inst) in instances.iter().enumerate() {
        offsets[i] = next;
        if inst.is_ok() {
            next += per_pomdp_units;
        }
    }

    let mut rows = Vec::new();
    let mut returns = Vec::new();
    let row = |seed: String, l: usize, g: usize, k: usize| ResultRow {
        experiment_id: cfg.experiment_id.clone(),
        pomdp_seed: seed,
        mapping: labels[l].clone(),
        gamma_train: cfg.gamma_train[g],
        n_tr: cfg.n_tr[k],
        mu: None,
        sigma: None,
        n_datasets: cfg.n_datasets,
        wall_ms: 0,
        error: String::new(),
    };
    for (i, inst) in instances.iter().enumerate() {
        let pseed = cfg.pomdp_seed(i).to_string();
        for l in 0..labels.len() {
            for g in 0..n_g {
                for k in 0..cfg.n_tr.len() {
                    let mut r = row(pseed.clone(), l, g, k);
                    let mut values = Vec::new();
                    match inst {
                        Err(e) => r.error = e.to_string(),
                        Ok(_) => {
                            let mut ms = 0.0;
                            for d in 0..cfg.n_datasets {
                                let (v, t) =
                                    &outcomes[offsets[i] + k * cfg.n_datasets + d][l * n_g + g];
                                ms += t;
                                match v {
                                    Ok(x) => values.push(*x),
                                    Err(e) if r.error.is_empty() => {
                                        r.error = format!("dataset {d}: {e}")
                                    }
                                    Err(_) => {}
                                }
                            }
                            r.wall_ms = ms.round() as u64;
                            if r.error.is_empty() {
                                let st = ExperimentStats::from_returns(values.clone());
                                r.mu = Some(st.mu);
                                r.sigma = Some(st.sigma);
                            } else {
                                values.clear();
                            }
                        }
                    }
                    rows.push(r);
                    returns.push(values);
                }
            }
        }
    }
    let n_data = rows.len();
    for l in 0..labels.len() {
        for g in 0..n_g {
            for k in 0..cfg.n_tr.len() {
                let cells: Vec<&ResultRow> = rows[..n_data]
                    .iter()
                    .filter(|r| {
                        r.mapping == labels[l]
                            && r.gamma_train == cfg.gamma_train[g]
                            && r.n_tr == cfg.n_tr[k]
                    })
                    .collect();
                let ok: Vec<&&ResultRow> = cells.iter().filter(|r| r.mu.is_some()).collect();
                let mut a = row(AGGREGATE_SEED.into(), l, g, k);
                a.wall_ms = cells.iter().map(|r| r.wall_ms).sum();
                if !ok.is_empty() {
                    a.mu = Some(stats::mean(
                        &ok.iter().map(|r| r.mu.unwrap()).collect::<Vec<_>>(),
                    ));
                    a.sigma = Some(stats::mean(
                        &ok.iter().map(|r| r.sigma.unwrap()).collect::<Vec<_>>(),
                    ));
                }
                if ok.len() < cells.len() {
                    a.error = format!("{} of {} cells failed", cells.len() - ok.len(), cells.len());
                }
                rows.push(a);
                returns.push(Vec::new());
            }
        }
    }
    Ok(Sweep { rows, returns })
}

/// `run_sweep` over the discount grid at the configured single mapping.
pub fn run_discount_sweep(cfg: &ExperimentConfig) -> Result<Sweep> {
    let mut c = cfg.clone();
    c.mappings = vec![cfg.discount_mapping.clone()];
    c.gamma_train = cfg.discount_grid.clone();
    run_sweep(&c)
}
