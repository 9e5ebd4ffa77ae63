//! Closed-form epsilon predictor over isotropic Gaussian-mixture data.
//!
//! Forward noising turns component `k` (mean `m_k`, variance `s_k^2`) into a
//! Gaussian with mean `sqrt(ab_t) m_k` and variance `ab_t s_k^2 + 1 - ab_t`.
//! The predictor returns `-sqrt(1 - ab_t) * grad_x log q_t(x | y)`, evaluated
//! as a responsibility-weighted sum of per-component scores.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConditionLabel {
    Null,
    Label(u32),
}

impl fmt::Display for ConditionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionLabel::Null => f.write_str("null"),
            ConditionLabel::Label(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for ConditionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "null" {
            return Ok(ConditionLabel::Null);
        }
        s.parse::<u32>()
            .map(ConditionLabel::Label)
            .map_err(|_| Error::Condition(format!("bad condition label '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Isotropic variance; zero means point-mass (delta) data.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    components: Vec<MixtureComponent>,
    dim: usize,
}

impl MixtureSpec {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Parameter("mixture needs at least one component".into()))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::Parameter("mixture mean must be non-empty".into()));
        }
        let mut total = 0.0;
        for c in &components {
            if c.mean.len() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    got: c.mean.len(),
                });
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::Parameter(format!("weight must be positive, got {}", c.weight)));
            }
            if !(c.variance >= 0.0 && c.variance.is_finite()) {
                return Err(Error::Parameter(format!(
                    "variance must be finite and non-negative, got {}",
                    c.variance
                )));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("mixture mean".into()));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { components, dim })
    }

    /// Equal-weight mixture of isotropic components sharing one variance.
    pub fn uniform(means: Vec<Vec<f64>>, variance: f64) -> Result<Self> {
        let w = 1.0 / means.len().max(1) as f64;
        Self::new(
            means
                .into_iter()
                .map(|mean| MixtureComponent {
                    weight: w,
                    mean,
                    variance,
                })
                .collect(),
        )
    }

    pub fn gaussian(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::uniform(vec![mean], variance)
    }

    /// Point mass at `mean`.
    pub fn delta(mean: Vec<f64>) -> Result<Self> {
        Self::gaussian(mean, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    /// Mixture mean `sum_k w_k m_k`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for c in &self.components {
            for (o, m) in out.iter_mut().zip(&c.mean) {
                *o += c.weight * m;
            }
        }
        out
    }
}

/// Exact stand-in for a pretrained epsilon network.
#[derive(Debug, Clone)]
pub struct DiffusionOracle {
    schedule: Arc<NoiseSchedule>,
    mixtures: BTreeMap<ConditionLabel, MixtureSpec>,
    dim: usize,
}

impl DiffusionOracle {
    /// `mixtures` must contain the `Null` label and agree on dimension.
    pub fn new(
        schedule: Arc<NoiseSchedule>,
        mixtures: impl IntoIterator<Item = (ConditionLabel, MixtureSpec)>,
    ) -> Result<Self> {
        let mixtures: BTreeMap<_, _> = mixtures.into_iter().collect();
        let null = mixtures
            .get(&ConditionLabel::Null)
            .ok_or_else(|| Error::Condition("the null label needs a mixture".into()))?;
        let dim = null.dim();
        for m in mixtures.values() {
            if m.dim() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    got: m.dim(),
                });
            }
        }
        Ok(Self {
            schedule,
            mixtures,
            dim,
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn schedule_arc(&self) -> Arc<NoiseSchedule> {
        Arc::clone(&self.schedule)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mixture(&self, y: ConditionLabel) -> Result<&MixtureSpec> {
        self.mixtures
            .get(&y)
            .ok_or_else(|| Error::Condition(format!("no mixture for label {y}")))
    }

    pub fn labels(&self) -> impl Iterator<Item = ConditionLabel> + '_ {
        self.mixtures.keys().copied()
    }

    /// Predicted noise `eps(x, t, y)`.
    ///
    /// At `t = 0` the latent carries no noise and the prediction is the zero
    /// vector (the `sqrt(1 - ab_0)` prefactor vanishes).
    pub fn epsilon(&self, x: &[f64], t: usize, y: ConditionLabel) -> Result<Vec<f64>> {
        self.schedule.check(t)?;
        let mix = self.mixture(y)?;
        if x.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                got: x.len(),
            });
        }
        if t == 0 {
            return Ok(vec![0.0; x.len()]);
        }
        let ab = self.schedule.alpha_bar(t)?;
        let a = ab.sqrt();
        let noise_var = 1.0 - ab;
        let half_dim = 0.5 * self.dim as f64;

        let comps = mix.components();
        let mut log_resp = Vec::with_capacity(comps.len());
        let mut variances = Vec::with_capacity(comps.len());
        for c in comps {
            let v = ab * c.variance + noise_var;
            let d2: f64 = x
                .iter()
                .zip(&c.mean)
                .map(|(xi, mi)| {
                    let d = xi - a * mi;
                    d * d
                })
                .sum();
            log_resp.push(c.weight.ln() - half_dim * v.ln() - 0.5 * d2 / v);
            variances.push(v);
        }
        let max = log_resp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut norm = 0.0;
        for l in log_resp.iter_mut() {
            *l = (*l - max).exp();
            norm += *l;
        }

        let scale = noise_var.sqrt();
        let mut eps = vec![0.0; x.len()];
        for ((c, r), v) in comps.iter().zip(&log_resp).zip(&variances) {
            let coef = scale * r / (norm * v);
            if coef == 0.0 {
                continue;
            }
            for ((e, xi), mi) in eps.iter_mut().zip(x).zip(&c.mean) {
                *e += coef * (xi - a * mi);
            }
        }
        Ok(eps)
    }

    /// Classifier-free guidance: `eps_null + scale * (eps_y - eps_null)`.
    pub fn epsilon_cfg(
        &self,
        x: &[f64],
        t: usize,
        y: ConditionLabel,
        guidance_scale: f64,
    ) -> Result<Vec<f64>> {
        if y == ConditionLabel::Null {
            return Err(Error::Condition("guidance needs a non-null label".into()));
        }
        let cond = self.epsilon(x, t, y)?;
        let mut out = self.epsilon(x, t, ConditionLabel::Null)?;
        for (u, c) in out.iter_mut().zip(&cond) {
            *u += guidance_scale * (c - *u);
        }
        Ok(out)
    }

    /// The conditional term used by the estimators: guided when
    /// `guidance_scale > 1`, the bare conditional prediction otherwise.
    pub fn conditional(
        &self,
        x: &[f64],
        t: usize,
        y: ConditionLabel,
        guidance_scale: f64,
    ) -> Result<Vec<f64>> {
        if guidance_scale > 1.0 {
            self.epsilon_cfg(x, t, y, guidance_scale)
        } else {
            self.epsilon(x, t, y)
        }
    }
}
