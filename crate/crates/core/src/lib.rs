//! Fixed-confidence best-arm identification with a cheap, biased judge score
//! on every pull and selectively audited ground-truth labels.
//!
//! Arm means are estimated as the judge mean plus an inverse-propensity
//! weighted residual mean, wrapped in anytime-valid confidence sequences; a
//! LUCB-style loop pulls the leader and its strongest challenger and audits
//! each pull with a logged propensity.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod boundary;
pub mod engine;
pub mod environment;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod oracle;
pub mod parallel;

pub use allocator::{AuditPolicyConfig, Granularity, PolicyKind, VarianceProxyState};
pub use boundary::{BoundaryParams, CsBudget};
pub use engine::{EngineConfig, Termination, TrialResult};
pub use environment::{judge_twin_instances, CostModel, Environment, EnvironmentSpec, Instance, JointTableInstance};
pub use error::{Error, Result};
pub use estimator::{ArmState, ConfidenceInterval, SampleRecord};
pub use harness::{AggregateReport, AggregateRow, ExperimentConfig, ExperimentKind, OutputFormat};
