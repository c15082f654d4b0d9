//! History mappings `φ : histories -> Σ` with a dense index over `Σ`.
//!
//! The only concrete family is the sliding window: the current observation
//! plus the preceding `h - 1` (observation, action) pairs, left-padded with
//! [`PAD`] while the history is shorter. `phi_full(H)` is the window of
//! width `H + 1`, which is injective on histories of length at most `H`.
//!
//! Keys are fixed-width `u32` tuples of length `h`, oldest slot first: a
//! pair slot holds `(ω·N_A + a)·B + bin` (`B = 1` unless rewards are
//! binned), the last slot holds the current observation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomdp::History;

pub const PAD: u32 = u32::MAX;

/// Default cap on `|Σ|` for dense enumeration.
pub const DEFAULT_CARDINALITY_CAP: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MappedState(pub Vec<u32>);

impl MappedState {
    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    /// Little-endian fixed-width bytes, stable across platforms.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.iter().flat_map(|t| t.to_le_bytes()).collect()
    }
}

pub trait HistoryMapping: Send + Sync + fmt::Debug {
    fn cardinality(&self) -> usize;
    fn n_obs(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// `φ` of the empty-step history with initial observation `obs`.
    fn initial(&self, obs: usize) -> usize;
    /// Number of reward bins `advance` distinguishes (1 if rewards are ignored).
    fn n_reward_bins(&self) -> usize {
        1
    }
    fn reward_bin(&self, _reward: f64) -> usize {
        0
    }
    /// `φ(H')` for `H' = H (a, r, ω')` given `σ = φ(H)`, with the reward
    /// already reduced to its bin.
    fn advance_binned(&self, sigma: usize, action: usize, bin: usize, obs: usize) -> usize;
    fn advance(&self, sigma: usize, action: usize, reward: f64, obs: usize) -> usize {
        self.advance_binned(sigma, action, self.reward_bin(reward), obs)
    }
    fn key(&self, sigma: usize) -> MappedState;
    fn index_of(&self, key: &MappedState) -> Option<usize>;
    fn descriptor(&self) -> String;
    /// Whether `advance` looks at the reward.
    fn uses_rewards(&self) -> bool {
        false
    }

    fn apply_index(&self, history: &History) -> usize {
        history
            .steps
            .iter()
            .fold(self.initial(history.initial_obs), |s, st| {
                self.advance(s, st.action, st.reward, st.obs)
            })
    }

    fn apply(&self, history: &History) -> MappedState {
        self.key(self.apply_index(history))
    }

    fn state_space(&self) -> Box<dyn Iterator<Item = MappedState> + '_> {
        Box::new((0..self.cardinality()).map(move |i| self.key(i)))
    }
}

/// Equal-width reward bins over `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBins {
    pub bins: usize,
    pub low: f64,
    pub high: f64,
}

impl RewardBins {
    #[inline]
    pub fn bin(&self, r: f64) -> usize {
        if self.bins <= 1 || !(self.high > self.low) {
            return 0;
        }
        let x = ((r - self.low) / (self.high - self.low) * self.bins as f64).floor();
        (x.max(0.0) as usize).min(self.bins - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    PhiH,
    Full,
}

/// Sliding-window mapping with a dense arithmetic index.
///
/// Index layout: histories whose key holds `k` real pairs occupy the block
/// starting at `offset(k) = Σ_{j<k} N_Ω·P^j` with `P = N_Ω·N_A·B`; within a
/// block, `index = offset(k) + ω + N_Ω·code`, where `code` packs the pairs
/// in base `P` with the newest pair least significant.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMapping {
    family: Family,
    window: usize,
    n_obs: usize,
    n_actions: usize,
    rewards: Option<RewardBins>,
    pair_base: usize,
    offsets: Vec<usize>,
}

impl WindowMapping {
    fn build(
        family: Family,
        window: usize,
        n_obs: usize,
        n_actions: usize,
        rewards: Option<RewardBins>,
        cap: usize,
    ) -> Result<Self> {
        if window == 0 || n_obs == 0 || n_actions == 0 {
            return Err(Error::Config(
                "window, n_obs and n_actions must be positive".into(),
            ));
        }
        let bins = rewards.map_or(1, |b| b.bins.max(1));
        let pair_base = n_obs
            .checked_mul(n_actions)
            .and_then(|x| x.checked_mul(bins))
            .ok_or(Error::StateSpaceTooLarge {
                size: usize::MAX,
                cap,
            })?;
        let mut offsets = Vec::with_capacity(window + 1);
        let mut total = 0usize;
        let mut block = n_obs;
        offsets.push(0);
        for k in 0..window {
            total = total.saturating_add(block);
            offsets.push(total);
            if k + 1 < window {
                block = block.saturating_mul(pair_base);
            }
        }
        if total > cap || total > u32::MAX as usize {
            return Err(match family {
                Family::Full => Error::HorizonTooLarge {
                    horizon: window - 1,
                    size: total,
                    cap,
                },
                Family::PhiH => Error::StateSpaceTooLarge { size: total, cap },
            });
        }
        Ok(Self {
            family,
            window,
            n_obs,
            n_actions,
            rewards: rewards.filter(|b| b.bins > 1),
            pair_base,
            offsets,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn reward_bins(&self) -> Option<RewardBins> {
        self.rewards
    }

    /// Number of real pairs in the key of `sigma`.
    #[inline]
    pub fn n_pairs(&self, sigma: usize) -> usize {
        // offsets is short (window + 1 entries)
        let mut k = 0;
        while sigma >= self.offsets[k + 1] {
            k += 1;
        }
        k
    }

    #[inline]
    fn split(&self, sigma: usize) -> (usize, usize, usize) {
        let k = self.n_pairs(sigma);
        let local = sigma - self.offsets[k];
        (k, local % self.n_obs, local / self.n_obs)
    }

    /// Index table mapping each `σ` of `self` onto the coarser window
    /// `coarser` by keeping the newest slots.
    pub fn suffix_projection(&self, coarser: &WindowMapping) -> Result<Vec<usize>> {
        if coarser.window > self.window
            || coarser.n_obs != self.n_obs
            || coarser.n_actions != self.n_actions
            || coarser.rewards != self.rewards
        {
            return Err(Error::InvalidDescriptor(format!(
                "{} is not a suffix of {}",
                coarser.descriptor(),
                self.descriptor()
            )));
        }
        Ok((0..self.cardinality())
            .map(|s| {
                let key = self.key(s);
                let tail = MappedState(key.0[key.0.len() - coarser.window..].to_vec());
                coarser
                    .index_of(&tail)
                    .expect("suffix of a valid key is valid")
            })
            .collect())
    }

    /// Render a key as dot-separated slots: `-` for padding, `ω/a` (or
    /// `ω/a/bin`) for a pair, `ω` for the current observation.
    pub fn key_to_string(&self, key: &MappedState) -> String {
        let bins = self.rewards.map_or(1, |b| b.bins);
        let n = key.0.len();
        key.0
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                if t == PAD {
                    "-".to_string()
                } else if i + 1 == n {
                    t.to_string()
                } else {
                    let t = t as usize;
                    let (bin, oa) = (t % bins, t / bins);
                    let (w, a) = (oa / self.n_actions, oa % self.n_actions);
                    if self.rewards.is_some() {
                        format!("{w}/{a}/{bin}")
                    } else {
                        format!("{w}/{a}")
                    }
                }
            })
            .collect::<Vec<_>>()
            .join(".")
    }

    pub fn key_from_str(&self, s: &str) -> Result<MappedState> {
        let bad = || Error::InvalidDescriptor(format!("bad key `{s}`"));
        let parts: Vec<&str> = s.split('.').collect();
        if parts.len() != self.window {
            return Err(bad());
        }
        let bins = self.rewards.map_or(1, |b| b.bins);
        let mut tokens = Vec::with_capacity(parts.len());
        for (i, p) in parts.iter().enumerate() {
            if *p == "-" {
                tokens.push(PAD);
            } else if i + 1 == parts.len() {
                tokens.push(p.parse().map_err(|_| bad())?);
            } else {
                let f: Vec<usize> = p
                    .split('/')
                    .map(|x| x.parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?;
                let (w, a, bin) = match f[..] {
                    [w, a] if self.rewards.is_none() => (w, a, 0),
                    [w, a, b] if self.rewards.is_some() => (w, a, b),
                    _ => return Err(bad()),
                };
                tokens.push(((w * self.n_actions + a) * bins + bin) as u32);
            }
        }
        let key = MappedState(tokens);
        self.index_of(&key).ok_or_else(bad)?;
        Ok(key)
    }
}

impl HistoryMapping for WindowMapping {
    fn cardinality(&self) -> usize {
        self.offsets[self.window]
    }

    fn n_obs(&self) -> usize {
        self.n_obs
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn initial(&self, obs: usize) -> usize {
        debug_assert!(obs < self.n_obs);
        obs
    }

    fn n_reward_bins(&self) -> usize {
        self.rewards.map_or(1, |b| b.bins)
    }

    fn reward_bin(&self, reward: f64) -> usize {
        self.rewards.map_or(0, |b| b.bin(reward))
    }

    #[inline]
    fn advance_binned(&self, sigma: usize, action: usize, bin: usize, obs: usize) -> usize {
        if self.window == 1 {
            return obs;
        }
        let (k, w, code) = self.split(sigma);
        let bins = self.rewards.map_or(1, |b| b.bins);
        let pair = (w * self.n_actions + action) * bins + bin;
        let max_pairs = self.window - 1;
        let (k2, code2) = if k < max_pairs {
            (k + 1, code * self.pair_base + pair)
        } else {
            // drop the oldest pair: code has max_pairs digits
            let top = self.pair_base.pow(max_pairs as u32 - 1);
            (k, (code % top) * self.pair_base + pair)
        };
        self.offsets[k2] + obs + self.n_obs * code2
    }

    fn key(&self, sigma: usize) -> MappedState {
        let (k, w, mut code) = self.split(sigma);
        let mut tokens = vec![PAD; self.window];
        tokens[self.window - 1] = w as u32;
        for i in 0..k {
            tokens[self.window - 2 - i] = (code % self.pair_base) as u32;
            code /= self.pair_base;
        }
        MappedState(tokens)
    }

    fn index_of(&self, key: &MappedState) -> Option<usize> {
        let t = &key.0;
        if t.len() != self.window {
            return None;
        }
        let w = *t.last()? as usize;
        if w >= self.n_obs {
            return None;
        }
        let pads = t[..self.window - 1]
            .iter()
            .take_while(|&&x| x == PAD)
            .count();
        let k = self.window - 1 - pads;
        let mut code = 0usize;
        for &p in &t[pads..self.window - 1] {
            if p == PAD || p as usize >= self.pair_base {
                return None;
            }
            code = code * self.pair_base + p as usize;
        }
        Some(self.offsets[k] + w + self.n_obs * code)
    }

    fn descriptor(&self) -> String {
        let base = match self.family {
            Family::PhiH => format!("phi_h:{}", self.window),
            Family::Full => format!("phi_full:{}", self.window - 1),
        };
        match self.rewards {
            Some(b) => format!("{base}:{}", b.bins),
            None => base,
        }
    }

    fn uses_rewards(&self) -> bool {
        self.rewards.is_some()
    }
}

/// Current observation plus the last `h - 1` (observation, action) pairs.
pub fn phi_h(h: usize, n_obs: usize, n_actions: usize) -> Result<WindowMapping> {
    WindowMapping::build(
        Family::PhiH,
        h,
        n_obs,
        n_actions,
        None,
        DEFAULT_CARDINALITY_CAP,
    )
}

/// Identity on histories of length at most `horizon` (rewards excluded).
pub fn phi_full(horizon: usize, n_obs: usize, n_actions: usize) -> Result<WindowMapping> {
    phi_full_with(horizon, n_obs, n_actions, None, DEFAULT_CARDINALITY_CAP)
}

/// `phi_full` with optional reward bins and an explicit enumeration cap.
pub fn phi_full_with(
    horizon: usize,
    n_obs: usize,
    n_actions: usize,
    rewards: Option<RewardBins>,
    cap: usize,
) -> Result<WindowMapping> {
    WindowMapping::build(Family::Full, horizon + 1, n_obs, n_actions, rewards, cap)
}

/// Parsed mapping descriptor: `phi_h:3`, `phi_full:2` or `phi_full:2:4`
/// (four reward bins).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MappingSpec {
    PhiH(usize),
    PhiFull { horizon: usize, reward_bins: usize },
}

impl MappingSpec {
    pub fn build(
        &self,
        n_obs: usize,
        n_actions: usize,
        reward_range: (f64, f64),
    ) -> Result<WindowMapping> {
        match *self {
            MappingSpec::PhiH(h) => phi_h(h, n_obs, n_actions),
            MappingSpec::PhiFull {
                horizon,
                reward_bins,
            } => {
                let bins = (reward_bins > 1).then_some(RewardBins {
                    bins: reward_bins,
                    low: reward_range.0,
                    high: reward_range.1,
                });
                phi_full_with(horizon, n_obs, n_actions, bins, DEFAULT_CARDINALITY_CAP)
            }
        }
    }

    /// Window width of the built mapping.
    pub fn window(&self) -> usize {
        match *self {
            MappingSpec::PhiH(h) => h,
            MappingSpec::PhiFull { horizon, .. } => horizon + 1,
        }
    }
}

impl FromStr for MappingSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidDescriptor(s.to_string());
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |x: &str| x.parse::<usize>().map_err(|_| bad());
        match parts[..] {
            ["phi_h", h] => {
                let h = num(h)?;
                if h == 0 {
                    return Err(bad());
                }
                Ok(MappingSpec::PhiH(h))
            }
            ["phi_full", n] => Ok(MappingSpec::PhiFull {
                horizon: num(n)?,
                reward_bins: 1,
            }),
            ["phi_full", n, b] => Ok(MappingSpec::PhiFull {
                horizon: num(n)?,
                reward_bins: num(b)?.max(1),
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for MappingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            MappingSpec::PhiH(h) => write!(f, "phi_h:{h}"),
            MappingSpec::PhiFull {
                horizon,
                reward_bins: b,
            } if b > 1 => write!(f, "phi_full:{horizon}:{b}"),
            MappingSpec::PhiFull { horizon, .. } => write!(f, "phi_full:{horizon}"),
        }
    }
}
