//! Simulation laboratory for non-stationary Lipschitz contextual bandits.
//!
//! The crate provides the dyadic partition tree over `[0,1]^d`, piecewise
//! stationary environments with hard-instance constructions, the
//! importance-weighted gap estimator and eviction rule, the CMETA
//! meta-algorithm with randomized replays, a post-hoc detector of
//! experienced significant shifts, comparator policies and an experiment
//! harness writing CSV and JSON outputs.

pub mod baselines;
pub mod env;
pub mod cmeta;
pub mod estimate;
pub mod harness;
pub mod error;
pub mod partition;
pub mod runlog;
pub mod seed;
pub mod shifts;

pub use baselines::PolicyKind;
pub use cmeta::{run_cmeta, CmetaConfig};
pub use env::{Environment, NoiseModel, RewardFunction, RoundSample};
pub use error::{Error, Result};
pub use estimate::EvictionMode;
pub use harness::{run_experiment, ExperimentConfig, ExperimentSummary};
pub use partition::{bin_of, level_for, max_level, BinId, Context};
pub use runlog::RunLog;
pub use shifts::{compute_shifts, DetectorConfig, GapTable, SigShiftReport};
