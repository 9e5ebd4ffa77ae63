//! Discrete noise schedule and the estimator time weighting.
//!
//! `alpha_bar[t]` is the cumulative signal retention at integer timestep `t`,
//! with `alpha_bar[0] = 1` and `alpha_bar[T]` numerically zero. Noise level
//! `1 - alpha_bar[t]` increases strictly with `t`.

use crate::error::{Error, Result};

/// Upper bound accepted for the final entry of a schedule.
pub const TERMINAL_ALPHA_BAR_MAX: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear-beta schedule: `beta_i` runs linearly from `beta_start` (i = 1)
    /// to `beta_end` (i = T) and `alpha_bar[t] = prod_{i<=t} (1 - beta_i)`.
    pub fn make_linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Parameter(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for i in 1..=steps {
            let frac = (i - 1) as f64 / (steps - 1) as f64;
            let beta = beta_start + (beta_end - beta_start) * frac;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Self::from_alpha_bar(alpha_bar)
    }

    /// Builds a schedule from an explicit `alpha_bar` table. The table must
    /// start at exactly 1 and strictly decrease within [0, 1]; the terminal
    /// bound is checked separately by [`NoiseSchedule::ensure_terminal`].
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 3 {
            return Err(Error::Parameter("schedule needs at least T = 2".into()));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::Parameter(format!(
                "alpha_bar[0] must be exactly 1, got {}",
                alpha_bar[0]
            )));
        }
        for (t, w) in alpha_bar.windows(2).enumerate() {
            if !(w[1] < w[0]) || !(0.0..=1.0).contains(&w[1]) {
                return Err(Error::Parameter(format!(
                    "alpha_bar must strictly decrease within [0, 1] (t = {})",
                    t + 1
                )));
            }
        }
        Ok(Self { alpha_bar })
    }

    /// Fails unless `alpha_bar[T]` is numerically zero, i.e. the chain ends
    /// in pure noise. Distillation runs require this.
    pub fn ensure_terminal(&self) -> Result<()> {
        let last = *self.alpha_bar.last().unwrap();
        if last > TERMINAL_ALPHA_BAR_MAX {
            return Err(Error::Parameter(format!(
                "alpha_bar[T] = {last:e} exceeds {TERMINAL_ALPHA_BAR_MAX:e}"
            )));
        }
        Ok(())
    }

    /// Number of discrete timesteps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar.get(t).copied().ok_or(Error::Index {
            t,
            max: self.steps(),
        })
    }

    /// `sqrt(alpha_bar[t])`, the signal coefficient.
    pub fn signal(&self, t: usize) -> Result<f64> {
        self.alpha_bar(t).map(f64::sqrt)
    }

    /// `sqrt(1 - alpha_bar[t])`, the noise coefficient.
    pub fn noise(&self, t: usize) -> Result<f64> {
        self.alpha_bar(t).map(|a| (1.0 - a).sqrt())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub(crate) fn check(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            Err(Error::Index {
                t,
                max: self.steps(),
            })
        } else {
            Ok(())
        }
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::make_linear(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

/// Time weighting applied to every estimator gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightFn {
    #[default]
    Constant,
    /// `1 - alpha_bar[t]`
    SigmaWeighted,
}

impl WeightFn {
    pub fn weight(&self, schedule: &NoiseSchedule, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(Error::Index {
                t,
                max: schedule.steps(),
            });
        }
        let a = schedule.alpha_bar(t)?;
        Ok(match self {
            WeightFn::Constant => 1.0,
            WeightFn::SigmaWeighted => 1.0 - a,
        })
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(WeightFn::Constant),
            "sigma" | "sigma-weighted" => Ok(WeightFn::SigmaWeighted),
            other => Err(Error::Config(format!("unknown weight kind '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightFn::Constant => "constant",
            WeightFn::SigmaWeighted => "sigma-weighted",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_direct_product_loop() {
        let s = NoiseSchedule::make_linear(1000, 1e-4, 0.02).unwrap();
        // independent oracle: betas via linspace, product via fold
        let betas: Vec<f64> = (0..1000)
            .map(|i| 1e-4 + (0.02 - 1e-4) * i as f64 / 999.0)
            .collect();
        let mut expected = vec![1.0];
        for b in &betas {
            let last = *expected.last().unwrap();
            expected.push(last * (1.0 - b));
        }
        for t in 0..=1000 {
            assert!((s.alpha_bar(t).unwrap() - expected[t]).abs() < 1e-15);
        }
        assert!(s.alpha_bar(1000).unwrap() < 1e-4);
        assert!(s.as_slice().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn two_step_hand_computed() {
        let s = NoiseSchedule::make_linear(2, 0.5, 0.5).unwrap();
        assert_eq!(s.as_slice(), &[1.0, 0.5, 0.25]);
        // far from pure noise at T
        assert!(s.ensure_terminal().is_err());
        assert!(NoiseSchedule::default().ensure_terminal().is_ok());
    }

    #[test]
    fn endpoints_and_monotone() {
        let s = NoiseSchedule::default();
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        assert!(s.alpha_bar(s.steps()).unwrap() <= 1e-4);
        assert!(s.alpha_bar(10).unwrap() > s.alpha_bar(11).unwrap());
        assert!(matches!(s.alpha_bar(1001), Err(Error::Index { .. })));
    }

    #[test]
    fn bad_parameters() {
        assert!(NoiseSchedule::make_linear(1, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::make_linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::make_linear(10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::make_linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn deterministic() {
        let a = NoiseSchedule::make_linear(500, 1e-4, 0.03).unwrap();
        let b = NoiseSchedule::make_linear(500, 1e-4, 0.03).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weights() {
        let s = NoiseSchedule::default();
        for t in [1, 10, 500, 1000] {
            assert_eq!(WeightFn::Constant.weight(&s, t).unwrap(), 1.0);
            assert!(WeightFn::SigmaWeighted.weight(&s, t).unwrap() > 0.0);
        }
        assert!((WeightFn::SigmaWeighted.weight(&s, 1000).unwrap() - 1.0).abs() < 1e-4);
        assert!(WeightFn::SigmaWeighted.weight(&s, 0).is_err());
    }
}
