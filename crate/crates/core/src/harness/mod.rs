//! Experiment configuration, sweeps and result emission.

mod reports;
mod sweep;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluator::RolloutConfig;
use crate::generator::{generate, GeneratorConfig};
use crate::mapping::MappingSpec;
use crate::pomdp::Pomdp;
use crate::seed;

pub use reports::{
    run_bounds_report, run_distribution_snapshot, samples_per_pair, BoundsCell, BoundsReport,
    PolicySnapshot, Snapshot, SnapshotEntry,
};
pub use sweep::{run_discount_sweep, run_sweep, ResultRow, Sweep, AGGREGATE_SEED};

/// Environment variable overriding the configured thread count.
pub const THREADS_ENV: &str = "BATCHPOMDP_THREADS";

pub const DEFAULT_N_TR: [usize; 9] = [2, 5, 10, 20, 50, 100, 500, 1000, 5000];
pub const DISCOUNT_PRESET: [f64; 5] = [0.5, 0.8, 0.9, 0.95, 0.98];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub n_pomdps: usize,
    /// Shape of the random POMDPs; its `seed` is replaced per instance.
    pub generator: GeneratorConfig,
    pub n_tr: Vec<usize>,
    pub mappings: Vec<String>,
    pub gamma_train: Vec<f64>,
    pub n_datasets: usize,
    pub rollout: RolloutConfig,
    pub seed: u64,
    /// Worker threads; 0 leaves the choice to the runtime.
    pub threads: usize,
    /// Discount grid of `run_discount_sweep`.
    pub discount_grid: Vec<f64>,
    /// Mapping of `run_discount_sweep`.
    pub discount_mapping: String,
    /// History length of the ε enumeration in `run_bounds_report`.
    pub bounds_horizon: usize,
    pub delta: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment_id: "sweep".into(),
            n_pomdps: 50,
            generator: GeneratorConfig::default(),
            n_tr: DEFAULT_N_TR.to_vec(),
            mappings: vec!["phi_h:1".into(), "phi_h:2".into(), "phi_h:3".into()],
            gamma_train: vec![0.95],
            n_datasets: 20,
            rollout: RolloutConfig::default(),
            seed: 0,
            threads: 0,
            discount_grid: DISCOUNT_PRESET.to_vec(),
            discount_mapping: "phi_h:3".into(),
            bounds_horizon: 3,
            delta: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pomdps == 0 || self.n_datasets == 0 {
            return Err(Error::Config(
                "n_pomdps and n_datasets must be positive".into(),
            ));
        }
        if self.n_tr.is_empty() || self.mappings.is_empty() || self.gamma_train.is_empty() {
            return Err(Error::Config("grids must be non-empty".into()));
        }
        if self.n_tr.contains(&0) {
            return Err(Error::Config("n_tr entries must be positive".into()));
        }
        for g in self.gamma_train.iter().chain(&self.discount_grid) {
            if !(0.0..1.0).contains(g) {
                return Err(Error::GammaOutOfRange(*g));
            }
        }
        self.mapping_specs()?;
        self.discount_mapping.parse::<MappingSpec>()?;
        if self.bounds_horizon == 0 {
            return Err(Error::Config("bounds_horizon must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidDelta(self.delta));
        }
        self.generator.validate()?;
        self.rollout.validate()
    }

    pub fn mapping_specs(&self) -> Result<Vec<MappingSpec>> {
        self.mappings.iter().map(|m| m.parse()).collect()
    }

    /// Seed of POMDP number `index`.
    pub fn pomdp_seed(&self, index: usize) -> u64 {
        seed::derive(self.seed, &[seed::tag::POMDP, index as u64])
    }

    pub fn pomdp(&self, index: usize) -> Result<Pomdp> {
        generate(&GeneratorConfig {
            seed: self.pomdp_seed(index),
            ..self.generator.clone()
        })
    }
}

/// Configure the global worker pool: `BATCHPOMDP_THREADS` wins over
/// `configured`; 0 means the runtime default. Returns the width in use.
pub fn init_thread_pool(configured: usize) -> usize {
    let width = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(configured);
    if width > 0 {
        // Only the first call can set the width; later calls keep it.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(width)
            .build_global();
    }
    rayon::current_num_threads()
}

/// SHA-256 of a CSV document with the named column blanked out.
pub fn csv_hash_excluding(csv_text: &str, column: &str) -> Result<String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(csv_text.as_bytes());
    let headers = reader.headers().map_err(csv_err)?.clone();
    let skip = headers.iter().position(|h| h == column);
    let mut hasher = Sha256::new();
    hasher.update(headers.iter().collect::<Vec<_>>().join(",").as_bytes());
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let fields: Vec<&str> = rec
            .iter()
            .enumerate()
            .map(|(i, f)| if Some(i) == skip { "" } else { f })
            .collect();
        hasher.update(b"\n");
        hasher.update(fields.join("\u{1f}").as_bytes());
    }
    Ok(hex(&hasher.finalize()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Parse {
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "n_pomdps = 3\nmappings = [\"phi_h:2\"]\n[rollout]\nhorizon = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.n_pomdps, 3);
        assert_eq!(cfg.rollout.horizon, 10);
        assert_eq!(cfg.rollout.n_rollouts, 1000);
        assert_eq!(cfg.n_tr, DEFAULT_N_TR.to_vec());
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("mappings = []").is_err());
        assert!(ExperimentConfig::from_toml_str("mappings = [\"phi_x:1\"]").is_err());
        assert!(ExperimentConfig::from_toml_str("gamma_train = [1.0]").is_err());
        assert!(ExperimentConfig::from_toml_str("unknown_field = 1").is_err());
    }

    #[test]
    fn hash_ignores_the_excluded_column() {
        let a = "x,wall_ms\n1,5\n2,7\n";
        let b = "x,wall_ms\n1,9\n2,1\n";
        let c = "x,wall_ms\n1,5\n3,7\n";
        let h = |s| csv_hash_excluding(s, "wall_ms").unwrap();
        assert_eq!(h(a), h(b));
        assert_ne!(h(a), h(c));
    }
}
