//! Deterministic DDIM denoising and inversion.
//!
//! Every update has the shape
//! `x_to = sqrt(ab_to) * (x_from - k_in * eps) / sqrt(ab_from) + k_out * eps`.
//! The standard update uses `k_in = sqrt(1 - ab_from)` and
//! `k_out = sqrt(1 - ab_to)`; [`FormulaMode::PaperLiteral`] swaps the two
//! noise coefficients on upward (noising) moves.

use crate::error::{Error, Result};
use crate::oracle::{ConditionLabel, DiffusionOracle};
use crate::schedule::NoiseSchedule;

/// A state vector tagged with its timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub values: Vec<f64>,
    pub t: usize,
}

impl Latent {
    pub fn new(values: Vec<f64>, t: usize) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("latent entry {i} at t = {t}")));
        }
        Ok(Self { values, t })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FormulaMode {
    /// Inversion and jumps with the sqrt(1 - alpha_bar) coefficients swapped
    /// relative to the standard update.
    PaperLiteral,
    #[default]
    DdimStandard,
}

impl FormulaMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "paper-literal" => Ok(FormulaMode::PaperLiteral),
            "ddim-standard" => Ok(FormulaMode::DdimStandard),
            other => Err(Error::Config(format!("unknown formula mode '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FormulaMode::PaperLiteral => "paper-literal",
            FormulaMode::DdimStandard => "ddim-standard",
        }
    }
}

/// Moves `x` from timestep `from` to `to` holding `eps` fixed.
pub fn transition(
    schedule: &NoiseSchedule,
    x: &[f64],
    from: usize,
    to: usize,
    eps: &[f64],
    mode: FormulaMode,
) -> Result<Vec<f64>> {
    if x.len() != eps.len() {
        return Err(Error::Shape {
            expected: x.len(),
            got: eps.len(),
        });
    }
    let (a_from, a_to) = (schedule.signal(from)?, schedule.signal(to)?);
    let (b_from, b_to) = (schedule.noise(from)?, schedule.noise(to)?);
    let (k_in, k_out) = match mode {
        FormulaMode::PaperLiteral if to > from => (b_to, b_from),
        _ => (b_from, b_to),
    };
    let ratio = a_to / a_from;
    Ok(x.iter()
        .zip(eps)
        .map(|(xi, ei)| ratio * (xi - k_in * ei) + k_out * ei)
        .collect())
}

/// Clean-sample estimate `(x - sqrt(1 - ab_t) eps) / sqrt(ab_t)`.
pub fn predict_x0(schedule: &NoiseSchedule, x: &Latent, eps: &[f64]) -> Result<Vec<f64>> {
    let (a, b) = (schedule.signal(x.t)?, schedule.noise(x.t)?);
    Ok(x.values
        .iter()
        .zip(eps)
        .map(|(xi, ei)| (xi - b * ei) / a)
        .collect())
}

/// Denoising update `x_t -> x_{t_prev}` with a caller-supplied `eps`.
pub fn denoise_with_eps(
    schedule: &NoiseSchedule,
    x: &Latent,
    t_prev: usize,
    eps: &[f64],
    mode: FormulaMode,
) -> Result<Latent> {
    if t_prev >= x.t {
        return Err(Error::Ordering(format!(
            "denoise needs t_prev < t, got {t_prev} >= {}",
            x.t
        )));
    }
    Latent::new(transition(schedule, &x.values, x.t, t_prev, eps, mode)?, t_prev)
}

/// Inversion update `x_{t_from} -> x_t` with a caller-supplied `eps`.
pub fn invert_with_eps(
    schedule: &NoiseSchedule,
    x: &Latent,
    t: usize,
    eps: &[f64],
    mode: FormulaMode,
) -> Result<Latent> {
    schedule.check(t)?;
    if t <= x.t {
        return Err(Error::Ordering(format!(
            "inversion needs t > {}, got {t}",
            x.t
        )));
    }
    Latent::new(transition(schedule, &x.values, x.t, t, eps, mode)?, t)
}

/// One DDIM denoising step, evaluating `eps(x_t, t, y)`.
pub fn denoise_step(
    oracle: &DiffusionOracle,
    x: &Latent,
    t_prev: usize,
    y: ConditionLabel,
    mode: FormulaMode,
) -> Result<Latent> {
    if t_prev >= x.t {
        return Err(Error::Ordering(format!(
            "denoise needs t_prev < t, got {t_prev} >= {}",
            x.t
        )));
    }
    let eps = oracle.epsilon(&x.values, x.t, y)?;
    denoise_with_eps(oracle.schedule(), x, t_prev, &eps, mode)
}

/// One DDIM inversion step from `x.t` up to `t`, linearized around the
/// unconditional prediction at the starting point.
pub fn invert_step(
    oracle: &DiffusionOracle,
    x: &Latent,
    t: usize,
    mode: FormulaMode,
) -> Result<Latent> {
    oracle.schedule().check(t)?;
    if t <= x.t {
        return Err(Error::Ordering(format!(
            "inversion needs t > {}, got {t}",
            x.t
        )));
    }
    let eps = oracle.epsilon(&x.values, x.t, ConditionLabel::Null)?;
    invert_with_eps(oracle.schedule(), x, t, &eps, mode)
}

/// Inverts a clean latent to timestep `s` in `s / delta_s` equal steps.
pub fn invert_trajectory(
    oracle: &DiffusionOracle,
    x0: &Latent,
    s: usize,
    delta_s: usize,
    mode: FormulaMode,
) -> Result<Latent> {
    if x0.t != 0 {
        return Err(Error::Step(format!("trajectory must start at t = 0, got {}", x0.t)));
    }
    oracle.schedule().check(s)?;
    if delta_s == 0 || s % delta_s != 0 {
        return Err(Error::Step(format!("delta_S = {delta_s} does not divide s = {s}")));
    }
    let mut x = x0.clone();
    for i in 0..s / delta_s {
        x = invert_step(oracle, &x, (i + 1) * delta_s, mode)?;
    }
    Ok(x)
}

/// Jumps `x_s` to `target` using a single unconditional evaluation at `x_s`.
/// Returns the latent and the `eps` that produced it.
pub fn jump(
    oracle: &DiffusionOracle,
    xs: &Latent,
    target: usize,
    mode: FormulaMode,
) -> Result<(Latent, Vec<f64>)> {
    oracle.schedule().check(target)?;
    if target <= xs.t {
        return Err(Error::Ordering(format!(
            "jump target {target} must exceed s = {}",
            xs.t
        )));
    }
    let eps = oracle.epsilon(&xs.values, xs.t, ConditionLabel::Null)?;
    let x = jump_with_eps(oracle.schedule(), xs, target, &eps, mode)?;
    Ok((x, eps))
}

/// Jump with a supplied `eps`; `target == xs.t` is allowed and is the
/// identity in both modes.
pub fn jump_with_eps(
    schedule: &NoiseSchedule,
    xs: &Latent,
    target: usize,
    eps: &[f64],
    mode: FormulaMode,
) -> Result<Latent> {
    schedule.check(target)?;
    if target < xs.t {
        return Err(Error::Ordering(format!(
            "jump target {target} is below s = {}",
            xs.t
        )));
    }
    if target == xs.t {
        return Ok(xs.clone());
    }
    Latent::new(transition(schedule, &xs.values, xs.t, target, eps, mode)?, target)
}

/// Both TSM jumps from `x_s`, sharing one evaluation of `eps(x_s, s, null)`.
#[derive(Debug, Clone)]
pub struct DualJump {
    pub x_mu: Latent,
    pub x_t: Latent,
    pub eps: Vec<f64>,
}

pub fn dual_jump(
    oracle: &DiffusionOracle,
    xs: &Latent,
    mu: usize,
    t: usize,
    mode: FormulaMode,
) -> Result<DualJump> {
    if !(xs.t <= mu && mu <= t) {
        return Err(Error::Ordering(format!(
            "need s <= mu <= t, got {} / {mu} / {t}",
            xs.t
        )));
    }
    let (x_t, eps) = jump(oracle, xs, t, mode)?;
    let x_mu = if mu == t {
        x_t.clone()
    } else {
        jump_with_eps(oracle.schedule(), xs, mu, &eps, mode)?
    };
    Ok(DualJump { x_mu, x_t, eps })
}

/// Intermediate timestep `s + round(gamma * (t - s))` with round-half-up.
/// For `gamma` strictly inside (0, 1) the result is kept strictly between
/// `s` and `t` whenever that interval is non-empty.
pub fn offset_timestep(s: usize, t: usize, gamma: f64) -> usize {
    let span = t - s;
    let mut off = (gamma * span as f64 + 0.5).floor() as usize;
    if gamma > 0.0 && gamma < 1.0 && span >= 2 {
        off = off.clamp(1, span - 1);
    }
    s + off.min(span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::MixtureSpec;
    use std::sync::Arc;

    fn oracle(mix: MixtureSpec) -> DiffusionOracle {
        DiffusionOracle::new(Arc::new(NoiseSchedule::default()), [(ConditionLabel::Null, mix)])
            .unwrap()
    }

    /// A mixture so broad that `eps` is numerically zero everywhere.
    fn zero_eps_oracle(dim: usize) -> DiffusionOracle {
        // eps = sqrt(1-ab) * x * (1/(ab*var + 1 - ab)) -> 0 as var -> inf
        oracle(MixtureSpec::gaussian(vec![0.0; dim], 1e300).unwrap())
    }

    fn lat(v: &[f64], t: usize) -> Latent {
        Latent::new(v.to_vec(), t).unwrap()
    }

    #[test]
    fn zero_eps_denoise_scales() {
        let o = zero_eps_oracle(2);
        let s = o.schedule();
        let x = lat(&[1.0, -2.0], 400);
        for mode in [FormulaMode::DdimStandard, FormulaMode::PaperLiteral] {
            let y = denoise_step(&o, &x, 350, ConditionLabel::Null, mode).unwrap();
            let r = (s.alpha_bar(350).unwrap() / s.alpha_bar(400).unwrap()).sqrt();
            assert!((y.values[0] - r).abs() < 1e-12);
            assert!((y.values[1] + 2.0 * r).abs() < 1e-12);
            let z = invert_step(&o, &x, 450, mode).unwrap();
            let r = (s.alpha_bar(450).unwrap() / s.alpha_bar(400).unwrap()).sqrt();
            assert!((z.values[0] - r).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_data_single_step_recovers_mean() {
        let mu = [0.6, -0.4, 1.1];
        let o = oracle(MixtureSpec::delta(mu.to_vec()).unwrap());
        let s = o.schedule();
        let noise = [0.3, -1.2, 0.8];
        for t in [2, 100, 800] {
            let (a, b) = (s.signal(t).unwrap(), s.noise(t).unwrap());
            let xt: Vec<f64> = mu.iter().zip(&noise).map(|(m, n)| a * m + b * n).collect();
            let xt = lat(&xt, t);
            let eps = o.epsilon(&xt.values, t, ConditionLabel::Null).unwrap();
            let x0 = predict_x0(s, &xt, &eps).unwrap();
            for (p, m) in x0.iter().zip(&mu) {
                assert!((p - m).abs() < 1e-9);
            }
            let prev = denoise_step(&o, &xt, t - 1, ConditionLabel::Null, FormulaMode::DdimStandard)
                .unwrap();
            let a1 = s.signal(t - 1).unwrap();
            let b1 = s.noise(t - 1).unwrap();
            for i in 0..3 {
                assert!((prev.values[i] - (a1 * mu[i] + b1 * noise[i])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reverse_chain_converges_to_mode() {
        let mu = [0.25, -0.75];
        let o = oracle(MixtureSpec::delta(mu.to_vec()).unwrap());
        let mut x = lat(&[1.3, -0.4], 1000);
        while x.t > 0 {
            let prev = x.t.saturating_sub(20);
            x = denoise_step(&o, &x, prev, ConditionLabel::Null, FormulaMode::DdimStandard).unwrap();
        }
        for (v, m) in x.values.iter().zip(&mu) {
            assert!((v - m).abs() < 1e-3);
        }
    }

    #[test]
    fn fixed_eps_round_trip_is_identity() {
        let s = NoiseSchedule::default();
        let x = lat(&[0.4, -1.7, 2.2], 120);
        let eps = [0.9, -0.3, 0.05];
        let up = invert_with_eps(&s, &x, 170, &eps, FormulaMode::DdimStandard).unwrap();
        let back = denoise_with_eps(&s, &up, 120, &eps, FormulaMode::DdimStandard).unwrap();
        for (a, b) in back.values.iter().zip(&x.values) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn reevaluated_round_trip_error_shrinks_with_gap() {
        let o = oracle(MixtureSpec::uniform(vec![vec![1.0, 0.0], vec![-1.0, 0.5]], 0.2).unwrap());
        let x = lat(&[0.3, 0.1], 300);
        let mut errs = Vec::new();
        for gap in [64, 32, 16, 8, 4] {
            let up = invert_step(&o, &x, 300 + gap, FormulaMode::DdimStandard).unwrap();
            let back =
                denoise_step(&o, &up, 300, ConditionLabel::Null, FormulaMode::DdimStandard).unwrap();
            let e: f64 = back
                .values
                .iter()
                .zip(&x.values)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            errs.push(e);
        }
        assert!(errs[0] > 0.0);
        for w in errs.windows(2) {
            assert!(w[1] < w[0], "{errs:?}");
            // second order in the gap: halving it cuts the error by ~4x
            let r = w[0] / w[1];
            assert!(r > 2.5 && r < 4.5, "{errs:?}");
        }
    }

    #[test]
    fn trajectory_edges() {
        let o = zero_eps_oracle(2);
        let x0 = lat(&[1.0, 2.0], 0);
        let same = invert_trajectory(&o, &x0, 0, 10, FormulaMode::DdimStandard).unwrap();
        assert_eq!(same, x0);
        let xs = invert_trajectory(&o, &x0, 300, 20, FormulaMode::DdimStandard).unwrap();
        let a = o.schedule().signal(300).unwrap();
        assert!((xs.values[0] - a).abs() < 1e-12 && (xs.values[1] - 2.0 * a).abs() < 1e-12);
        assert!(matches!(
            invert_trajectory(&o, &x0, 300, 70, FormulaMode::DdimStandard),
            Err(Error::Step(_))
        ));

        let o = oracle(MixtureSpec::gaussian(vec![0.5, 0.5], 0.3).unwrap());
        let one = invert_trajectory(&o, &x0, 200, 200, FormulaMode::DdimStandard).unwrap();
        let step = invert_step(&o, &x0, 200, FormulaMode::DdimStandard).unwrap();
        assert_eq!(one, step);
    }

    #[test]
    fn jumps_share_eps() {
        let o = oracle(MixtureSpec::uniform(vec![vec![1.0, -1.0], vec![0.0, 0.5]], 0.1).unwrap());
        let xs = lat(&[0.2, 0.9], 300);
        let (_, e1) = jump(&o, &xs, 340, FormulaMode::DdimStandard).unwrap();
        let (_, e2) = jump(&o, &xs, 400, FormulaMode::PaperLiteral).unwrap();
        assert_eq!(e1, e2);
        let d = dual_jump(&o, &xs, 320, 400, FormulaMode::DdimStandard).unwrap();
        assert_eq!(d.eps, e1);
        let id = jump_with_eps(o.schedule(), &xs, 300, &e1, FormulaMode::DdimStandard).unwrap();
        assert_eq!(id, xs);
        assert!(matches!(
            jump(&o, &xs, 300, FormulaMode::DdimStandard),
            Err(Error::Ordering(_))
        ));
    }

    #[test]
    fn zero_eps_jump_scales() {
        let o = zero_eps_oracle(1);
        let xs = lat(&[3.0], 100);
        for mode in [FormulaMode::DdimStandard, FormulaMode::PaperLiteral] {
            let (x, _) = jump(&o, &xs, 500, mode).unwrap();
            let s = o.schedule();
            let r = (s.alpha_bar(500).unwrap() / s.alpha_bar(100).unwrap()).sqrt();
            assert!((x.values[0] - 3.0 * r).abs() < 1e-12);
        }
    }

    #[test]
    fn paper_literal_swaps_coefficients() {
        let s = NoiseSchedule::default();
        let x = lat(&[1.0], 100);
        let eps = [0.5];
        let got = jump_with_eps(&s, &x, 300, &eps, FormulaMode::PaperLiteral).unwrap();
        let (a_s, a_t) = (s.signal(100).unwrap(), s.signal(300).unwrap());
        let (b_s, b_t) = (s.noise(100).unwrap(), s.noise(300).unwrap());
        let want = a_t * (1.0 - b_t * 0.5) / a_s + b_s * 0.5;
        assert!((got.values[0] - want).abs() < 1e-14);
    }

    #[test]
    fn offset_rounding() {
        assert_eq!(offset_timestep(100, 150, 0.0), 100);
        assert_eq!(offset_timestep(100, 150, 1.0), 150);
        assert_eq!(offset_timestep(100, 150, 0.3), 115);
        // 0.5 * 5 = 2.5 rounds up
        assert_eq!(offset_timestep(0, 5, 0.5), 3);
        // clamped away from the ends for interior gamma
        assert_eq!(offset_timestep(10, 20, 0.01), 11);
        assert_eq!(offset_timestep(10, 20, 0.99), 19);
        assert_eq!(offset_timestep(10, 11, 0.3), 10);
    }

    #[test]
    fn non_finite_latent_rejected() {
        assert!(matches!(Latent::new(vec![f64::NAN], 0), Err(Error::NonFinite(_))));
    }
}
