//! Desk-scale score distillation lab.
//!
//! Compares SDS, ISM and TSM gradient estimators against a closed-form
//! Gaussian-mixture diffusion oracle, with DDIM inversion trajectories, a
//! differentiable 2D splat generator, per-pixel depth-gradient clipping and
//! densification control.

pub mod clipping;
pub mod ddim;
pub mod densify;
pub mod error;
pub mod estimators;
pub mod generator;
pub mod harness;
pub mod oracle;
pub mod schedule;

pub use clipping::{clip_color, clip_depth, ClipConfig, ScaleMap};
pub use ddim::{FormulaMode, Latent};
pub use densify::{ActionCounts, DensifyAction, DensifyConfig, DensifyController};
pub use error::{Error, Result};
pub use estimators::{EstimatorConfig, EstimatorKind, Gaps, LatentGradient};
pub use generator::{RenderOutput, Splat, SplatGrad, SplatScene, ViewParam};
pub use oracle::{ConditionLabel, DiffusionOracle, MixtureComponent, MixtureSpec};
pub use schedule::{NoiseSchedule, WeightFn};
