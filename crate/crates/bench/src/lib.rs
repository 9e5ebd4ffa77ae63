//! Shared fixtures for the criterion benches.

use std::sync::Arc;

use tsmlab::{ConditionLabel, DiffusionOracle, MixtureSpec, NoiseSchedule};

/// A small two-label oracle in `dim` dimensions.
pub fn bench_oracle(dim: usize) -> DiffusionOracle {
    let schedule = Arc::new(NoiseSchedule::default());
    let target = MixtureSpec::uniform(vec![vec![0.7; dim]], 0.01).expect("valid mixture");
    let null = MixtureSpec::uniform(vec![vec![0.7; dim], vec![0.2; dim], vec![0.5; dim]], 0.05)
        .expect("valid mixture");
    DiffusionOracle::new(schedule, [(ConditionLabel::Label(1), target), (ConditionLabel::Null, null)])
        .expect("valid oracle")
}
