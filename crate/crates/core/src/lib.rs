//! Batch reinforcement learning on finite POMDPs.
//!
//! Build frequentist augmented MDPs over history mappings from fixed
//! trajectory datasets, measure the bias/overfitting split of the resulting
//! policies, and check the ε-sufficiency and bisimulation bounds numerically.

pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod generator;
pub mod harness;
pub mod mapping;
pub mod mdp;
pub mod pomdp;
pub mod propagate;
pub mod seed;
pub mod stats;
pub mod theory;

pub use dataset::{Dataset, SamplingPolicy, Trajectory};
pub use error::{Error, Result};
pub use generator::{fixture, GeneratorConfig};
pub use mapping::{phi_full, phi_h, HistoryMapping, MappedState, MappingSpec, WindowMapping};
pub use mdp::{AugmentedMdp, QTable, Solution, TabularPolicy, ValueTable};
pub use pomdp::{BeliefState, History, InitialDistribution, Pomdp};
