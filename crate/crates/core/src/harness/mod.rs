//! Run configuration, the optimization loop, experiment suites and
//! artifact emission.

pub mod artifacts;
pub mod config;
pub mod distill;
pub mod optim;
pub mod suites;
pub mod targets;

pub use config::{GeneratorKind, InitSpec, OptimizerKind, RawConfig, RunConfig};
pub use distill::{build_oracle, run_distill, run_distill_with, MetricsRecord, Params, RunResult, Snapshot, METRICS_HEADER};
pub use suites::{ablate_gamma, analyze_trajectory, compare_estimators, seed_consistency, TrajectoryReport, VarianceMap};
pub use targets::{MeanSource, Pattern};
