//! Exact forward propagation of the joint distribution `ρ_t(s, σ)`.
//!
//! Shared by the asymptotic fit (stochastic behaviour policy, expected
//! transition counts) and by exact policy evaluation (deterministic table
//! over `Σ`). The successor of `σ` only depends on `(a, ω', reward bin)`,
//! so expected counts are accumulated per successor slot
//! `slot = ω'·B + bin` and never need a dense `|Σ|²` table.

use crate::error::{Error, Result};
use crate::mapping::HistoryMapping;
use crate::pomdp::{InitialDistribution, Pomdp};

/// Default cap on `|Σ|·N_S` for the dense joint vector.
pub const DEFAULT_JOINT_CAP: usize = 1 << 23;

/// How actions are chosen during propagation.
#[derive(Debug, Clone, Copy)]
pub enum ActionRule<'a> {
    /// History-independent probabilities, one per action.
    Stochastic(&'a [f64]),
    /// One action per `σ`.
    Table(&'a [usize]),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Collect {
    /// Expected `(σ, a, slot)` visit mass and reward mass.
    pub slots: bool,
    /// `Σ_t ρ_t(s, σ)`, indexed `[σ][s]`.
    pub occupancy: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Propagation {
    /// `Σ_t discount^t E[r_t]`.
    pub value: f64,
    /// `[σ][a][slot]` expected visit mass summed over steps.
    pub slot_mass: Vec<f64>,
    /// `[σ][a][slot]` expected reward mass summed over steps.
    pub slot_reward: Vec<f64>,
    /// `[σ][s]` summed over steps.
    pub occupancy: Vec<f64>,
    /// Distribution of `σ_0`.
    pub initial_sigma: Vec<f64>,
    /// Total joint mass at each step; 1 up to rounding.
    pub step_mass: Vec<f64>,
}

/// `σ' = φ(H a r ω')` for every `(σ, a, slot)`, `slot = ω'·B + bin`.
#[derive(Debug, Clone)]
pub struct SuccessorTable {
    n_actions: usize,
    n_bins: usize,
    slots: usize,
    succ: Vec<u32>,
}

impl SuccessorTable {
    pub fn new(mapping: &dyn HistoryMapping) -> Self {
        let (na, no, bins) = (
            mapping.n_actions(),
            mapping.n_obs(),
            mapping.n_reward_bins(),
        );
        let slots = no * bins;
        let mut succ = Vec::with_capacity(mapping.cardinality() * na * slots);
        for sigma in 0..mapping.cardinality() {
            for a in 0..na {
                for w in 0..no {
                    for b in 0..bins {
                        succ.push(mapping.advance_binned(sigma, a, b, w) as u32);
                    }
                }
            }
        }
        Self {
            n_actions: na,
            n_bins: bins,
            slots,
            succ,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.slots
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    #[inline]
    pub fn slot(&self, obs: usize, bin: usize) -> usize {
        obs * self.n_bins + bin
    }

    #[inline]
    pub fn get(&self, sigma: usize, action: usize, slot: usize) -> usize {
        self.succ[(sigma * self.n_actions + action) * self.slots + slot] as usize
    }
}

struct Arc {
    next: usize,
    prob: f64,
    bin: usize,
    reward: f64,
}

/// Precomputed successor tables for one `(pomdp, mapping)` pair.
pub struct Propagator<'a> {
    pomdp: &'a Pomdp,
    mapping: &'a dyn HistoryMapping,
    table: SuccessorTable,
    arcs: Vec<Vec<Arc>>,
}

impl<'a> Propagator<'a> {
    pub fn new(pomdp: &'a Pomdp, mapping: &'a dyn HistoryMapping) -> Result<Self> {
        Self::with_cap(pomdp, mapping, DEFAULT_JOINT_CAP)
    }

    pub fn with_cap(pomdp: &'a Pomdp, mapping: &'a dyn HistoryMapping, cap: usize) -> Result<Self> {
        if mapping.n_obs() != pomdp.n_obs() || mapping.n_actions() != pomdp.n_actions() {
            return Err(Error::DimensionMismatch(format!(
                "mapping {} built for {} observations / {} actions, model has {} / {}",
                mapping.descriptor(),
                mapping.n_obs(),
                mapping.n_actions(),
                pomdp.n_obs(),
                pomdp.n_actions()
            )));
        }
        let n_sigma = mapping.cardinality();
        let size = n_sigma.saturating_mul(pomdp.n_states());
        if size > cap {
            return Err(Error::StateSpaceTooLarge { size, cap });
        }
        let table = SuccessorTable::new(mapping);
        let na = pomdp.n_actions();
        let ns = pomdp.n_states();
        let mut arcs = Vec::with_capacity(ns * na);
        for s in 0..ns {
            for a in 0..na {
                arcs.push(
                    (0..ns)
                        .filter(|&s2| pomdp.t(s, a, s2) > 0.0)
                        .map(|s2| Arc {
                            next: s2,
                            prob: pomdp.t(s, a, s2),
                            bin: mapping.reward_bin(pomdp.r(s, a, s2)),
                            reward: pomdp.r(s, a, s2),
                        })
                        .collect(),
                );
            }
        }
        Ok(Self {
            pomdp,
            mapping,
            table,
            arcs,
        })
    }

    pub fn n_slots(&self) -> usize {
        self.table.slots
    }

    pub fn table(&self) -> &SuccessorTable {
        &self.table
    }

    pub fn mapping(&self) -> &dyn HistoryMapping {
        self.mapping
    }

    /// Successor `σ'` for a `(σ, a, slot)` triple.
    #[inline]
    pub fn successor(&self, sigma: usize, action: usize, slot: usize) -> usize {
        self.table.get(sigma, action, slot)
    }

    /// Joint distribution of `(s_0, σ_0)`, indexed `[σ][s]`.
    pub fn initial_joint(&self, init: &InitialDistribution) -> Vec<f64> {
        let ns = self.pomdp.n_states();
        let mut rho = vec![0.0; self.mapping.cardinality() * ns];
        for (s, &p) in init.probs().iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (w, &q) in self.pomdp.o_row(s).iter().enumerate() {
                if q > 0.0 {
                    rho[self.mapping.initial(w) * ns + s] += p * q;
                }
            }
        }
        rho
    }

    /// Propagate for `n_steps` actions (t = 0..n_steps-1).
    pub fn run(
        &self,
        init: &InitialDistribution,
        rule: ActionRule<'_>,
        n_steps: usize,
        discount: f64,
        collect: Collect,
    ) -> Result<Propagation> {
        let p = self.pomdp;
        let (ns, na) = (p.n_states(), p.n_actions());
        let n_sigma = self.mapping.cardinality();
        match rule {
            ActionRule::Stochastic(probs) if probs.len() != na => {
                return Err(Error::DimensionMismatch("action probabilities".into()))
            }
            ActionRule::Table(t) if t.len() != n_sigma => {
                return Err(Error::DimensionMismatch(format!(
                    "policy covers {} states, mapping has {n_sigma}",
                    t.len()
                )))
            }
            ActionRule::Table(t) if t.iter().any(|&a| a >= na) => {
                return Err(Error::OutOfRange("policy action".into()))
            }
            _ => {}
        }
        if init.probs().len() != ns {
            return Err(Error::DimensionMismatch("initial distribution size".into()));
        }

        let mut rho = self.initial_joint(init);
        let mut out = Propagation {
            initial_sigma: (0..n_sigma)
                .map(|sg| rho[sg * ns..(sg + 1) * ns].iter().sum())
                .collect(),
            ..Default::default()
        };
        if collect.slots {
            out.slot_mass = vec![0.0; n_sigma * na * self.table.slots];
            out.slot_reward = vec![0.0; n_sigma * na * self.table.slots];
        }
        if collect.occupancy {
            out.occupancy = vec![0.0; n_sigma * ns];
        }
        let mut next = vec![0.0; rho.len()];
        let single = [1.0];
        let mut disc_t = 1.0;

        for t in 0..n_steps {
            let last = t + 1 == n_steps;
            let mut total = 0.0;
            let mut value_t = 0.0;
            for (idx, &m) in rho.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                total += m;
                let (sigma, s) = (idx / ns, idx % ns);
                if collect.occupancy {
                    out.occupancy[idx] += m;
                }
                let (first_action, probs): (usize, &[f64]) = match rule {
                    ActionRule::Stochastic(pr) => (0, pr),
                    ActionRule::Table(tab) => (tab[sigma], &single),
                };
                for (k, &pa) in probs.iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    let a = first_action + k;
                    let w = m * pa;
                    let base = (sigma * na + a) * self.table.slots;
                    for arc in &self.arcs[s * na + a] {
                        let wp = w * arc.prob;
                        value_t += wp * arc.reward;
                        if last && !collect.slots {
                            continue;
                        }
                        let bins = self.table.n_bins;
                        for (obs, &q) in p.o_row(arc.next).iter().enumerate() {
                            if q == 0.0 {
                                continue;
                            }
                            let mass = wp * q;
                            let slot = obs * bins + arc.bin;
                            if collect.slots {
                                out.slot_mass[base + slot] += mass;
                                out.slot_reward[base + slot] += mass * arc.reward;
                            }
                            if !last {
                                let s2 = self.table.succ[base + slot] as usize;
                                next[s2 * ns + arc.next] += mass;
                            }
                        }
                    }
                }
            }
            out.value += disc_t * value_t;
            out.step_mass.push(total);
            disc_t *= discount;
            if !last {
                std::mem::swap(&mut rho, &mut next);
                next.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::fixture;
    use crate::mapping::phi_h;

    #[test]
    fn chain2_alternating_policy_value() {
        let p = fixture("chain2").unwrap();
        let m = phi_h(1, 2, 2).unwrap();
        let prop = Propagator::new(&p, &m).unwrap();
        let r = prop
            .run(
                p.init(),
                ActionRule::Table(&[0, 0]),
                100,
                1.0,
                Collect::default(),
            )
            .unwrap();
        assert_eq!(r.value, 50.0);
        let r0 = prop
            .run(
                p.init(),
                ActionRule::Table(&[0, 0]),
                0,
                1.0,
                Collect::default(),
            )
            .unwrap();
        assert_eq!(r0.value, 0.0);
    }

    #[test]
    fn mass_is_conserved() {
        let p = crate::generator::generate(&crate::GeneratorConfig::default()).unwrap();
        let m = phi_h(2, 5, 2).unwrap();
        let prop = Propagator::new(&p, &m).unwrap();
        let r = prop
            .run(
                p.init(),
                ActionRule::Stochastic(&[0.5, 0.5]),
                20,
                1.0,
                Collect {
                    slots: true,
                    occupancy: true,
                },
            )
            .unwrap();
        for m in &r.step_mass {
            assert!((m - 1.0).abs() < 1e-9);
        }
        let visits: f64 = r.slot_mass.iter().sum();
        assert!((visits - 20.0).abs() < 1e-9);
    }
}
