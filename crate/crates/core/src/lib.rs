//! Differentially private distributed online and offline learning.
//!
//! `m` learners each hold a shard of labeled data. Every round they mix the
//! noised parameters of their neighbours through a doubly stochastic matrix,
//! take a projected subgradient step on local data, and broadcast the result
//! with Laplace noise calibrated to the step's L1 sensitivity.
//!
//! The crate provides both engines, the communication schedules, the privacy
//! calibration and audit, regret and bound computations, data generation and
//! loading, and a sweep runner that writes CSV and SVG artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod metrics;
pub mod offline;
pub mod online;
mod plot;
pub mod privacy;
pub mod rng;
pub mod topology;
pub mod vector;

pub use data::{generate_synthetic, load_sparse, parse_sparse, partition, Dataset, Example, ShardPlan};
pub use error::{Error, Result};
pub use experiment::{emit_table1_analog, run_experiment, ExperimentKind, ExperimentSpec, Manifest};
pub use loss::{FeasibleSet, LossKind, LossModel, StepsizeSchedule};
pub use metrics::{
    accuracy, empirical_regret, offline_utility_bound, theorem2_bound, BoundInputs, ComparatorCache,
    RegretCase, RegretReport,
};
pub use offline::{
    batch_subgradient, offline_learner_step, run_offline, train_svm, ExcessRiskEstimate,
    OfflineRunConfig, RegularizeAt,
};
pub use online::{learner_step, run_online, weighted_average, LearnerState, OnlineRunConfig, RunRecord};
pub use privacy::{
    audit_sensitivity, laplace_vector, sensitivity_minibatch, sensitivity_online, AuditConfig,
    AuditReport, PrivacyParams,
};
pub use topology::{CommMatrix, CommSchedule, ConsensusRate, ScheduleMode};
