//! Score-distillation gradient estimators in latent space.
//!
//! * SDS: `w(t) (eps_cond(x_t) - eps)` for a freshly noised `x_t`.
//! * ISM: invert `x_0 -> x_s` along the DDIM trajectory, jump `x_s -> x_t`,
//!   and return `w(t) (eps_cond(x_t, t) - eps(x_s, s, null))`.
//! * TSM: jump `x_s` to both `x_mu` and `x_t` with one shared prediction and
//!   return `w(t) (eps_cond(x_t, t) - eps(x_mu, mu, null))`.
//!
//! With `gamma = 0` the TSM interval collapses to `mu = s` and the result is
//! bit-identical to ISM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ddim::{self, FormulaMode, Latent};
use crate::error::{Error, Result};
use crate::oracle::{ConditionLabel, DiffusionOracle};
use crate::schedule::{NoiseSchedule, WeightFn};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Sds,
    Ism,
    Tsm,
}

impl EstimatorKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sds" => Ok(Self::Sds),
            "ism" => Ok(Self::Ism),
            "tsm" => Ok(Self::Tsm),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sds => "sds",
            Self::Ism => "ism",
            Self::Tsm => "tsm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Interval between `s` and `t`.
    pub delta_t: usize,
    /// Inversion step size along `0 -> s`.
    pub delta_s: usize,
    /// Offset rate placing `mu` between `s` and `t`.
    pub gamma: f64,
    pub t_min: usize,
    pub t_max: usize,
    pub guidance_scale: f64,
    pub mode: FormulaMode,
    pub weight: WeightFn,
}

impl EstimatorConfig {
    /// Defaults for a schedule with `steps` timesteps.
    pub fn for_steps(steps: usize) -> Self {
        let delta_t = 50;
        Self {
            delta_t,
            delta_s: 25,
            gamma: 0.3,
            t_min: delta_t + 1,
            t_max: steps - 1,
            guidance_scale: 7.5,
            mode: FormulaMode::DdimStandard,
            weight: WeightFn::Constant,
        }
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.delta_t == 0 || self.delta_s == 0 {
            return bad("delta_T and delta_S must be positive".into());
        }
        if self.delta_s > self.delta_t {
            return bad(format!(
                "delta_S ({}) must not exceed delta_T ({})",
                self.delta_s, self.delta_t
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.t_min < 1 + self.delta_t {
            return bad(format!(
                "t_min ({}) must be at least 1 + delta_T ({})",
                self.t_min,
                1 + self.delta_t
            ));
        }
        if self.t_min > self.t_max || self.t_max > schedule.steps() {
            return bad(format!(
                "need t_min <= t_max <= T, got {} / {} / {}",
                self.t_min,
                self.t_max,
                schedule.steps()
            ));
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return bad(format!("guidance scale must be >= 0, got {}", self.guidance_scale));
        }
        if self.trajectory_steps().is_empty() {
            return bad(format!(
                "no t in [{}, {}] has t - delta_T divisible by delta_S = {}",
                self.t_min, self.t_max, self.delta_s
            ));
        }
        Ok(())
    }

    /// Range of `k` such that `t = k * delta_S + delta_T` is admissible.
    fn trajectory_steps(&self) -> std::ops::RangeInclusive<usize> {
        let lo = (self.t_min - self.delta_t).div_ceil(self.delta_s).max(1);
        let hi = (self.t_max - self.delta_t) / self.delta_s;
        lo..=hi
    }

    /// Uniform draw over admissible `t`: those in `[t_min, t_max]` whose
    /// interval start `s = t - delta_T` is a positive multiple of `delta_S`.
    pub fn sample_trajectory_t<R: Rng>(&self, rng: &mut R) -> usize {
        let k = rng.random_range(self.trajectory_steps());
        k * self.delta_s + self.delta_t
    }

    /// `mu` for a given `t`.
    pub fn mu_for(&self, t: usize) -> usize {
        ddim::offset_timestep(t - self.delta_t, t, self.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaps {
    /// `||x_t - x_s||`
    pub ism: f64,
    /// `||x_t - x_mu||`
    pub tsm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentGradient {
    pub values: Vec<f64>,
    pub t_used: usize,
    pub s_used: usize,
    pub mu_used: usize,
    pub loss_proxy: f64,
    /// Trajectory gaps; absent for SDS.
    pub gaps: Option<Gaps>,
}

impl LatentGradient {
    pub fn norm(&self) -> f64 {
        l2(&self.values)
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_x0(oracle: &DiffusionOracle, x0: &Latent) -> Result<()> {
    if x0.t != 0 {
        return Err(Error::Step(format!("x0 must be at t = 0, got {}", x0.t)));
    }
    if x0.dim() != oracle.dim() {
        return Err(Error::Shape {
            expected: oracle.dim(),
            got: x0.dim(),
        });
    }
    Ok(())
}

/// Weighted difference plus `w * 0.5 * ||a - b||^2`.
fn weighted_diff(w: f64, a: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let loss = 0.5 * w * diff.iter().map(|d| d * d).sum::<f64>();
    (diff.into_iter().map(|d| w * d).collect(), loss)
}

pub fn sds_gradient(
    oracle: &DiffusionOracle,
    x0: &Latent,
    y: ConditionLabel,
    cfg: &EstimatorConfig,
    rng_seed: u64,
) -> Result<LatentGradient> {
    let schedule = oracle.schedule();
    cfg.validate(schedule)?;
    check_x0(oracle, x0)?;
    let mut rng = rng_for(rng_seed);
    let t = rng.random_range(cfg.t_min..=cfg.t_max);
    let noise: Vec<f64> = (0..x0.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let (a, b) = (schedule.signal(t)?, schedule.noise(t)?);
    let xt: Vec<f64> = x0.values.iter().zip(&noise).map(|(x, n)| a * x + b * n).collect();
    let pred = oracle.conditional(&xt, t, y, cfg.guidance_scale)?;
    let w = cfg.weight.weight(schedule, t)?;
    let (values, _) = weighted_diff(w, &pred, &noise);
    let (_, loss) = weighted_diff(1.0, &pred, &noise);
    Ok(LatentGradient {
        values,
        t_used: t,
        s_used: t,
        mu_used: t,
        loss_proxy: loss,
        gaps: None,
    })
}

/// Draws `t` for the trajectory estimators from `rng_seed`.
pub fn sample_t(cfg: &EstimatorConfig, rng_seed: u64) -> usize {
    cfg.sample_trajectory_t(&mut rng_for(rng_seed))
}

pub fn ism_gradient(
    oracle: &DiffusionOracle,
    x0: &Latent,
    y: ConditionLabel,
    cfg: &EstimatorConfig,
    rng_seed: u64,
) -> Result<LatentGradient> {
    cfg.validate(oracle.schedule())?;
    ism_gradient_at(oracle, x0, y, cfg, sample_t(cfg, rng_seed))
}

/// ISM at an explicit `t`.
pub fn ism_gradient_at(
    oracle: &DiffusionOracle,
    x0: &Latent,
    y: ConditionLabel,
    cfg: &EstimatorConfig,
    t: usize,
) -> Result<LatentGradient> {
    check_x0(oracle, x0)?;
    let s = t
        .checked_sub(cfg.delta_t)
        .ok_or_else(|| Error::Ordering(format!("t = {t} is below delta_T")))?;
    let xs = ddim::invert_trajectory(oracle, x0, s, cfg.delta_s, cfg.mode)?;
    let (xt, eps_s) = ddim::jump(oracle, &xs, t, cfg.mode)?;
    let pred = oracle.conditional(&xt.values, t, y, cfg.guidance_scale)?;
    let w = cfg.weight.weight(oracle.schedule(), t)?;
    let (values, loss) = weighted_diff(w, &pred, &eps_s);
    let gap = dist(&xt.values, &xs.values);
    Ok(LatentGradient {
        values,
        t_used: t,
        s_used: s,
        mu_used: s,
        loss_proxy: loss,
        gaps: Some(Gaps { ism: gap, tsm: gap }),
    })
}

pub fn tsm_gradient(
    oracle: &DiffusionOracle,
    x0: &Latent,
    y: ConditionLabel,
    cfg: &EstimatorConfig,
    rng_seed: u64,
) -> Result<LatentGradient> {
    cfg.validate(oracle.schedule())?;
    tsm_gradient_at(oracle, x0, y, cfg, sample_t(cfg, rng_seed))
}

/// The three latents of one TSM evaluation.
#[derive(Debug, Clone)]
pub struct TrajectoryPoints {
    pub xs: Latent,
    pub x_mu: Latent,
    pub x_t: Latent,
    pub shared_eps: Vec<f64>,
}

impl TrajectoryPoints {
    pub fn gaps(&self) -> Gaps {
        Gaps {
            ism: dist(&self.x_t.values, &self.xs.values),
            tsm: dist(&self.x_t.values, &self.x_mu.values),
        }
    }
}

/// Inverts to `s = t - delta_T` and performs the dual jump to `mu` and `t`.
pub fn trajectory_points(
    oracle: &DiffusionOracle,
    x0: &Latent,
    cfg: &EstimatorConfig,
    t: usize,
) -> Result<TrajectoryPoints> {
    check_x0(oracle, x0)?;
    let s = t
        .checked_sub(cfg.delta_t)
        .ok_or_else(|| Error::Ordering(format!("t = {t} is below delta_T")))?;
    let mu = cfg.mu_for(t);
    let xs = ddim::invert_trajectory(oracle, x0, s, cfg.delta_s, cfg.mode)?;
    let dual = ddim::dual_jump(oracle, &xs, mu, t, cfg.mode)?;
    Ok(TrajectoryPoints {
        xs,
        x_mu: dual.x_mu,
        x_t: dual.x_t,
        shared_eps: dual.eps,
    })
}

/// TSM at an explicit `t`.
pub fn tsm_gradient_at(
    oracle: &DiffusionOracle,
    x0: &Latent,
    y: ConditionLabel,
    cfg: &EstimatorConfig,
    t: usize,
) -> Result<LatentGradient> {
    let pts = trajectory_points(oracle, x0, cfg, t)?;
    let pred = oracle.conditional(&pts.x_t.values, t, y, cfg.guidance_scale)?;
    let eps_mu = oracle.epsilon(&pts.x_mu.values, pts.x_mu.t, ConditionLabel::Null)?;
    let w = cfg.weight.weight(oracle.schedule(), t)?;
    let (values, loss) = weighted_diff(w, &pred, &eps_mu);
    Ok(LatentGradient {
        values,
        t_used: t,
        s_used: pts.xs.t,
        mu_used: pts.x_mu.t,
        loss_proxy: loss,
        gaps: Some(pts.gaps()),
    })
}

/// `(||x_t - x_s||, ||x_t - x_mu||)` on the trajectory TSM would use for
/// this seed.
pub fn gap_metrics(
    oracle: &DiffusionOracle,
    x0: &Latent,
    cfg: &EstimatorConfig,
    rng_seed: u64,
) -> Result<Gaps> {
    cfg.validate(oracle.schedule())?;
    let t = sample_t(cfg, rng_seed);
    Ok(trajectory_points(oracle, x0, cfg, t)?.gaps())
}

pub fn estimate(
    kind: EstimatorKind,
    oracle: &DiffusionOracle,
    x0: &Latent,
    y: ConditionLabel,
    cfg: &EstimatorConfig,
    rng_seed: u64,
) -> Result<LatentGradient> {
    match kind {
        EstimatorKind::Sds => sds_gradient(oracle, x0, y, cfg, rng_seed),
        EstimatorKind::Ism => ism_gradient(oracle, x0, y, cfg, rng_seed),
        EstimatorKind::Tsm => tsm_gradient(oracle, x0, y, cfg, rng_seed),
    }
}
