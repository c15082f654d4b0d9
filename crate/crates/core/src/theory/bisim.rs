use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kantorovich::{kantorovich, MetricMatrix};
use crate::error::{Error, Result};
use crate::mdp::AugmentedMdp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BisimConfig {
    pub c_r: f64,
    pub c_t: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for BisimConfig {
    fn default() -> Self {
        Self {
            c_r: 0.1,
            c_t: 0.9,
            tol: 1e-10,
            max_iters: 10_000,
        }
    }
}

impl BisimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_r > 0.0) || !(0.0..1.0).contains(&self.c_t) || self.c_r + self.c_t > 1.0 + 1e-12
        {
            return Err(Error::Config(format!(
                "need c_r > 0, 0 ≤ c_t < 1, c_r + c_t ≤ 1 (got {}, {})",
                self.c_r, self.c_t
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisimRun {
    /// Fixed point in the original reward units.
    pub metric: MetricMatrix,
    /// Width of the `R̂'` range the rewards were divided by.
    pub reward_scale: f64,
    /// `‖d_{k+1} − d_k‖_∞` per iteration.
    pub residuals: Vec<f64>,
    /// Whether every iterate dominated the previous one pointwise.
    pub monotone: bool,
}

impl BisimRun {
    /// Largest `r_{k+1} / r_k` over iterations with a residual above `floor`.
    pub fn max_contraction_ratio(&self, floor: f64) -> f64 {
        self.residuals
            .windows(2)
            .filter(|w| w[0] > floor)
            .map(|w| w[1] / w[0])
            .fold(0.0, f64::max)
    }
}

/// Least fixed point of
/// `F(d)(σ¹,σ²) = max_a c_r |R̂'(σ¹,a) − R̂'(σ²,a)| + c_t T_K(d)(T̂(σ¹,a,·), T̂(σ²,a,·))`.
pub fn bisim_fixed_point(mdp: &AugmentedMdp, cfg: &BisimConfig) -> Result<MetricMatrix> {
    Ok(bisim_run(mdp, cfg)?.metric)
}

/// `bisim_fixed_point` with the iteration trace.
pub fn bisim_run(mdp: &AugmentedMdp, cfg: &BisimConfig) -> Result<BisimRun> {
    cfg.validate()?;
    let (n, na) = (mdp.n_sigma(), mdp.n_actions());
    let raw: Vec<f64> = (0..n * na)
        .map(|i| mdp.expected_reward(i / na, i % na))
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { hi - lo } else { 1.0 };
    let reward: Vec<f64> = raw.iter().map(|r| (r - lo) / scale).collect();
    let rows: Vec<Vec<f64>> = (0..n * na)
        .map(|i| mdp.t_row_dense(i / na, i % na))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();

    let mut d = MetricMatrix::zeros(n);
    let mut residuals = Vec::new();
    let mut monotone = true;
    for _ in 0..cfg.max_iters {
        let values: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| {
                let mut best: f64 = 0.0;
                for a in 0..na {
                    let tk = kantorovich(&d, &rows[i * na + a], &rows[j * na + a])?;
                    let v =
                        cfg.c_r * (reward[i * na + a] - reward[j * na + a]).abs() + cfg.c_t * tk;
                    best = best.max(v);
                }
                Ok(best)
            })
            .collect::<Result<_>>()?;
        let mut next = MetricMatrix::zeros(n);
        let mut res: f64 = 0.0;
        for (&(i, j), &v) in pairs.iter().zip(&values) {
            let old = d.get(i, j);
            if v < old - 1e-12 {
                monotone = false;
            }
            res = res.max((v - old).abs());
            next.set(i, j, v);
        }
        residuals.push(res);
        d = next;
        if res <= cfg.tol {
            return Ok(BisimRun {
                metric: d.scaled(scale),
                reward_scale: scale,
                residuals,
                monotone,
            });
        }
    }
    Err(Error::NoConvergence(cfg.max_iters))
}
