//! Random POMDP distribution and hand-built fixtures.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomdp::{InitialDistribution, Pomdp};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_obs: usize,
    /// Probability that a raw transition entry is zeroed.
    pub sparsity_zero_prob: f64,
    /// `O[s_i][ω_i]` when `n_obs == n_states`.
    pub obs_self_prob: f64,
    pub reward_low: f64,
    pub reward_high: f64,
    /// Environment discount stored in the model.
    pub gamma: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_states: 5,
            n_actions: 2,
            n_obs: 5,
            sparsity_zero_prob: 0.75,
            obs_self_prob: 0.5,
            reward_low: -1.0,
            reward_high: 1.0,
            gamma: 1.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn sized(n_states: usize, n_actions: usize, n_obs: usize) -> Self {
        Self {
            n_states,
            n_actions,
            n_obs,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 || self.n_obs == 0 {
            return Err(Error::Config(
                "state, action and observation counts must be positive".into(),
            ));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.sparsity_zero_prob) {
            return Err(Error::Config(format!(
                "sparsity_zero_prob {} outside [0, 1]",
                self.sparsity_zero_prob
            )));
        }
        if !unit.contains(&self.obs_self_prob) {
            return Err(Error::Config(format!(
                "obs_self_prob {} outside [0, 1]",
                self.obs_self_prob
            )));
        }
        if !(self.reward_low < self.reward_high)
            || !self.reward_low.is_finite()
            || !self.reward_high.is_finite()
        {
            return Err(Error::Config(format!(
                "reward range [{}, {}] is empty",
                self.reward_low, self.reward_high
            )));
        }
        if !unit.contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Uniform draw in (0, 1], so a kept entry is never exactly zero.
fn positive_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.gen::<f64>()
}

/// Raw transition row before the rescue step. Returns the row and the
/// number of zeroed entries.
pub(crate) fn raw_transition_row<R: Rng + ?Sized>(
    n: usize,
    zero_prob: f64,
    rng: &mut R,
) -> (Vec<f64>, usize) {
    let mut zeros = 0;
    let row = (0..n)
        .map(|_| {
            if rng.gen::<f64>() < zero_prob {
                zeros += 1;
                0.0
            } else {
                positive_unit(rng)
            }
        })
        .collect();
    (row, zeros)
}

fn normalize(row: &mut [f64], total: f64) {
    let z: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x *= total / z);
}

/// Draw one POMDP from the random distribution.
pub fn sample_pomdp<R: Rng + ?Sized>(config: &GeneratorConfig, rng: &mut R) -> Result<Pomdp> {
    config.validate()?;
    let GeneratorConfig {
        n_states: ns,
        n_actions: na,
        n_obs: no,
        ..
    } = *config;

    let mut transition = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let (mut row, zeros) = raw_transition_row(ns, config.sparsity_zero_prob, rng);
        if zeros == ns {
            let k = rng.gen_range(0..ns);
            row[k] = positive_unit(rng);
        }
        normalize(&mut row, 1.0);
        transition.extend(row);
    }

    let (lo, hi) = (config.reward_low, config.reward_high);
    let reward = (0..ns * na * ns).map(|_| rng.gen_range(lo..hi)).collect();

    let mut obs = Vec::with_capacity(ns * no);
    for s in 0..ns {
        if no == 1 {
            obs.push(1.0);
        } else if no == ns {
            let mut rest: Vec<f64> = (0..no - 1).map(|_| positive_unit(rng)).collect();
            normalize(&mut rest, 1.0 - config.obs_self_prob);
            rest.insert(s, config.obs_self_prob);
            obs.extend(rest);
        } else {
            let mut row: Vec<f64> = (0..no).map(|_| positive_unit(rng)).collect();
            normalize(&mut row, 1.0);
            obs.extend(row);
        }
    }

    let p = Pomdp::from_parts(
        ns,
        na,
        no,
        transition,
        reward,
        obs,
        InitialDistribution::uniform(ns),
        config.gamma,
        hi - lo,
    )?;
    p.validate()?;
    Ok(p)
}

/// `sample_pomdp` seeded from `config.seed`.
pub fn generate(config: &GeneratorConfig) -> Result<Pomdp> {
    sample_pomdp(config, &mut seed::rng(config.seed))
}

pub const FIXTURES: [&str; 3] = ["chain2", "identity_obs_5", "uninformative_obs"];

/// Hand-built models.
///
/// * `chain2`: two states, two actions, identity observations, starts in
///   `s0`. Action 0 swaps the state and pays 1 on `s1 -> s0`; action 1 stays
///   put and pays 0. The best 100-step undiscounted return is 50.
/// * `identity_obs_5`: five states on a ring, identity observations,
///   uniform start. Action 0 moves clockwise with probability 0.8 (else
///   stays), action 1 counter-clockwise with probability 0.8. Arriving in
///   `s4` pays 1; action 1 costs 0.1.
/// * `uninformative_obs`: three states, two observations emitted uniformly
///   in every state, uniform start. Action 0 advances `s -> s+1 (mod 3)`
///   with probability 0.7, action 1 resets to `s0` with probability 0.6.
///   The reward is `s'/2` minus 0.25 for action 1.
pub fn fixture(name: &str) -> Result<Pomdp> {
    match name {
        "chain2" => Pomdp::new(
            2,
            2,
            2,
            // [s][a][s']
            vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 1.0],
            InitialDistribution::point(2, 0),
            1.0,
        ),
        "identity_obs_5" => {
            let n = 5;
            let mut t = vec![0.0; n * 2 * n];
            let mut r = vec![0.0; n * 2 * n];
            for s in 0..n {
                for (a, next) in [(0, (s + 1) % n), (1, (s + n - 1) % n)] {
                    let i = (s * 2 + a) * n;
                    t[i + next] += 0.8;
                    t[i + s] += 0.2;
                    for s2 in 0..n {
                        r[i + s2] = if s2 == n - 1 { 1.0 } else { 0.0 } - 0.1 * a as f64;
                    }
                }
            }
            let mut o = vec![0.0; n * n];
            (0..n).for_each(|s| o[s * n + s] = 1.0);
            Pomdp::new(n, 2, n, t, r, o, InitialDistribution::uniform(n), 1.0)
        }
        "uninformative_obs" => {
            let n = 3;
            let mut t = vec![0.0; n * 2 * n];
            let mut r = vec![0.0; n * 2 * n];
            for s in 0..n {
                let i0 = s * 2 * n;
                t[i0 + (s + 1) % n] += 0.7;
                t[i0 + s] += 0.3;
                let i1 = i0 + n;
                t[i1] += 0.6;
                t[i1 + s] += 0.4;
                for s2 in 0..n {
                    r[i0 + s2] = s2 as f64 / 2.0;
                    r[i1 + s2] = s2 as f64 / 2.0 - 0.25;
                }
            }
            Pomdp::new(
                n,
                2,
                2,
                t,
                r,
                vec![0.5; n * 2],
                InitialDistribution::uniform(n),
                1.0,
            )
        }
        other => Err(Error::UnknownFixture(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_gives_valid_models_with_fixed_diagonal() {
        for s in 0..20 {
            let cfg = GeneratorConfig {
                seed: s,
                ..GeneratorConfig::default()
            };
            let p = generate(&cfg).unwrap();
            p.validate().unwrap();
            for i in 0..5 {
                assert_eq!(p.o(i, i), 0.5);
            }
            assert_eq!(p.r_max(), 2.0);
        }
    }

    #[test]
    fn no_zeroing_keeps_rows_positive() {
        let cfg = GeneratorConfig {
            sparsity_zero_prob: 0.0,
            ..GeneratorConfig::default()
        };
        let p = generate(&cfg).unwrap();
        for s in 0..5 {
            for a in 0..2 {
                assert!(p.t_row(s, a).iter().all(|&x| x > 0.0));
            }
        }
    }

    #[test]
    fn same_seed_same_model() {
        let cfg = GeneratorConfig {
            seed: 99,
            ..GeneratorConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }

    #[test]
    fn mismatched_obs_count_uses_plain_random_rows() {
        let p = generate(&GeneratorConfig::sized(4, 2, 3)).unwrap();
        p.validate().unwrap();
        assert_eq!(p.n_obs(), 3);
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let cfg = GeneratorConfig {
            reward_low: 1.0,
            reward_high: 1.0,
            ..GeneratorConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        let cfg = GeneratorConfig {
            sparsity_zero_prob: 1.5,
            ..GeneratorConfig::default()
        };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn fixtures_validate() {
        for name in FIXTURES {
            fixture(name).unwrap().validate().unwrap();
        }
        assert!(matches!(fixture("tiger"), Err(Error::UnknownFixture(_))));
    }

    #[test]
    fn full_zeroing_still_yields_one_entry_per_row() {
        let cfg = GeneratorConfig {
            sparsity_zero_prob: 1.0,
            ..GeneratorConfig::default()
        };
        let p = generate(&cfg).unwrap();
        for s in 0..5 {
            for a in 0..2 {
                let row = p.t_row(s, a);
                assert_eq!(row.iter().filter(|&&x| x > 0.0).count(), 1);
                assert!(row.contains(&1.0));
            }
        }
    }
}
