//! ε-sufficiency, closed-form bounds, bisimulation metrics and numerical
//! checks of the supporting inequalities.

mod bisim;
mod bounds;
mod epsilon;
mod kantorovich;
mod verify;

use serde::{Deserialize, Serialize};

pub use bisim::{bisim_fixed_point, bisim_run, BisimConfig, BisimRun};
pub use bounds::{bias_bound, hoeffding_deviation, overfitting_bound};
pub use epsilon::{
    enumerate_histories, epsilon_from_nodes, epsilon_sufficiency, Clusters, EpsilonReport,
    HistoryNode, HistorySet,
};
pub use kantorovich::{kantorovich, kantorovich_plan, Flow, MetricMatrix};
pub use verify::{
    asymptotic_state_occupancy, lookahead_q, verify_bellman_residual, verify_hoeffding_envelope,
    verify_lemma_l1, verify_lemma_qmetric, verify_proposition1, HoeffdingReport,
};

/// Default history probability below which enumeration stops.
pub const DEFAULT_PRUNE_MASS: f64 = 1e-12;
/// Default cap on enumerated histories.
pub const DEFAULT_HISTORY_CAP: usize = 2_000_000;

/// Outcome of an inequality check `lhs <= bound + tolerance` over many
/// instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub instances: usize,
    pub violations: usize,
    /// Largest `lhs - bound` seen (negative when every instance has room).
    pub max_slack: f64,
    pub tolerance: f64,
    pub coverage_mass: Option<f64>,
    /// Largest `lhs / bound` over instances with a positive bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<Box<CheckReport>>,
}

impl CheckReport {
    pub fn new(check: impl Into<String>, tolerance: f64) -> Self {
        Self {
            check: check.into(),
            instances: 0,
            violations: 0,
            max_slack: f64::NEG_INFINITY,
            tolerance,
            coverage_mass: None,
            max_ratio: None,
            secondary: None,
        }
    }

    /// Record one instance of `lhs <= bound`.
    pub fn record(&mut self, lhs: f64, bound: f64) {
        self.instances += 1;
        let slack = lhs - bound;
        if !(slack <= self.tolerance) {
            self.violations += 1;
        }
        self.max_slack = self.max_slack.max(slack);
        if bound > 0.0 {
            let r = lhs / bound;
            self.max_ratio = Some(self.max_ratio.map_or(r, |m: f64| m.max(r)));
        }
    }

    /// Fold another report of the same check into this one.
    pub fn absorb(&mut self, other: &CheckReport) {
        self.instances += other.instances;
        self.violations += other.violations;
        self.max_slack = self.max_slack.max(other.max_slack);
        if let Some(r) = other.max_ratio {
            self.max_ratio = Some(self.max_ratio.map_or(r, |m| m.max(r)));
        }
        self.coverage_mass = match (self.coverage_mass, other.coverage_mass) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        match (&mut self.secondary, &other.secondary) {
            (Some(a), Some(b)) => a.absorb(b),
            (a @ None, Some(b)) => *a = Some(b.clone()),
            _ => {}
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.secondary.as_ref().is_none_or(|s| s.passed())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
