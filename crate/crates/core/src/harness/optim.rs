//! Plain gradient descent and Adam over flat parameter vectors.

use super::config::{OptimSpec, OptimizerKind};

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

impl Optimizer {
    pub fn new(spec: &OptimSpec, len: usize) -> Self {
        Self {
            kind: spec.kind,
            lr: spec.lr,
            beta1: spec.beta1,
            beta2: spec.beta2,
            eps: spec.eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
        }
    }

    /// Drops any moment state; needed when the parameter layout changes.
    pub fn reset(&mut self, len: usize) {
        self.m = vec![0.0; len];
        self.v = vec![0.0; len];
        self.steps = 0;
    }

    /// `params -= lr * lr_scale[i] * direction(grads)[i]`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr_scale: impl Fn(usize) -> f64) {
        debug_assert_eq!(params.len(), grads.len());
        match self.kind {
            OptimizerKind::Sgd => {
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    *p -= self.lr * lr_scale(i) * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    self.reset(params.len());
                }
                self.steps += 1;
                let c1 = 1.0 - self.beta1.powi(self.steps);
                let c2 = 1.0 - self.beta2.powi(self.steps);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    *p -= self.lr * lr_scale(i) * mh / (vh.sqrt() + self.eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: OptimizerKind) -> OptimSpec {
        OptimSpec {
            kind,
            lr: 0.1,
            iterations: 1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            group_lr: [1.0; 6],
        }
    }

    #[test]
    fn sgd_step() {
        let mut o = Optimizer::new(&spec(OptimizerKind::Sgd), 2);
        let mut p = [1.0, 2.0];
        o.step(&mut p, &[1.0, -2.0], |i| if i == 0 { 1.0 } else { 0.5 });
        assert_eq!(p, [0.9, 2.1]);
    }

    #[test]
    fn adam_first_step_is_sign_times_lr() {
        let mut o = Optimizer::new(&spec(OptimizerKind::Adam), 2);
        let mut p = [0.0, 0.0];
        o.step(&mut p, &[3.0, -0.01], |_| 1.0);
        assert!((p[0] + 0.1).abs() < 1e-6 && (p[1] - 0.1).abs() < 1e-4, "{p:?}");
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut o = Optimizer::new(&spec(OptimizerKind::Adam), 1);
        let mut p = [5.0];
        for _ in 0..500 {
            let g = [2.0 * (p[0] - 1.0)];
            o.step(&mut p, &g, |_| 1.0);
        }
        assert!((p[0] - 1.0).abs() < 1e-2, "{p:?}");
    }
}
