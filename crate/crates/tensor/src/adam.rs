//! Adam optimizer with bias correction.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Cosine decay of the learning rate to zero over this many steps.
    pub cosine_decay_steps: Option<u64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            cosine_decay_steps: None,
        }
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A non-finite gradient was seen; parameters and moments untouched.
    SkippedNonFinite,
}

/// Per-parameter first/second moment state plus the step counter.
pub struct Adam<S: Scalar> {
    pub config: AdamConfig,
    step: u64,
    moment1: Vec<Vec<S>>,
    moment2: Vec<Vec<S>>,
    skipped: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, moment1: Vec::new(), moment2: Vec::new(), skipped: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Number of steps skipped because of non-finite gradients.
    pub fn skipped_steps(&self) -> u64 {
        self.skipped
    }

    fn effective_lr(&self, step: u64) -> f64 {
        match self.config.cosine_decay_steps {
            Some(total) if total > 0 => {
                let t = (step.min(total)) as f64 / total as f64;
                self.config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
            _ => self.config.learning_rate,
        }
    }

    /// Apply one update to `params` from their accumulated gradients.
    /// Parameters without a gradient are treated as having zero gradient.
    /// Any non-finite gradient skips the whole step.
    pub fn step(&mut self, params: &[Tensor<S>]) -> StepOutcome {
        if self.moment1.is_empty() {
            self.moment1 = params.iter().map(|p| vec![S::zero(); p.numel()]).collect();
            self.moment2 = params.iter().map(|p| vec![S::zero(); p.numel()]).collect();
        }
        assert_eq!(self.moment1.len(), params.len(), "optimizer bound to a different parameter set");

        for p in params {
            if let Some(g) = p.0.grad.borrow().as_ref() {
                if g.iter().any(|v| !v.is_finite()) {
                    self.skipped += 1;
                    return StepOutcome::SkippedNonFinite;
                }
            }
        }

        self.step += 1;
        let t = self.step;
        let b1 = S::from_f64(self.config.beta1);
        let b2 = S::from_f64(self.config.beta2);
        let one = S::one();
        let lr = S::from_f64(self.effective_lr(t));
        let eps = S::from_f64(self.config.epsilon);
        let bc1 = S::from_f64(1.0 - self.config.beta1.powi(t as i32));
        let bc2 = S::from_f64(1.0 - self.config.beta2.powi(t as i32));

        for (idx, p) in params.iter().enumerate() {
            let grad = p.0.grad.borrow();
            let m = &mut self.moment1[idx];
            let v = &mut self.moment2[idx];
            let mut data = p.data_mut();
            for j in 0..data.len() {
                let g = grad.as_ref().map_or(S::zero(), |g| g[j]);
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] = data[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        StepOutcome::Applied
    }
}

/// Drop accumulated gradients on all given parameters.
pub fn zero_grads<S: Scalar>(params: &[Tensor<S>]) {
    for p in params {
        p.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::{Adam, AdamConfig, StepOutcome};
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let p = Tensor::<f64>::param(&[2], vec![1.0, -2.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::default());
        // no grad accumulated at all
        assert_eq!(opt.step(&[p.clone()]), StepOutcome::Applied);
        assert_eq!(p.to_vec(), vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        // hand-evaluated Adam recurrence, one step, bias-corrected:
        // m_hat = 1, v_hat = 1, delta = lr / (1 + eps) ~= lr
        let p = Tensor::<f64>::param(&[1], vec![0.5]).unwrap();
        p.accumulate_grad(&[1.0]);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&[p.clone()]);
        let moved = 0.5 - p.to_vec()[0];
        assert!((moved - 0.001).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn non_finite_gradient_skips_step() {
        let p = Tensor::<f64>::param(&[1], vec![0.5]).unwrap();
        p.accumulate_grad(&[f64::NAN]);
        let mut opt = Adam::new(AdamConfig::default());
        assert_eq!(opt.step(&[p.clone()]), StepOutcome::SkippedNonFinite);
        assert_eq!(p.to_vec(), vec![0.5]);
        assert_eq!(opt.skipped_steps(), 1);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn quadratic_bowl_converges_monotonically_after_warmup() {
        // f(w) = w^2, gradient 2w
        let p = Tensor::<f64>::param(&[1], vec![2.0]).unwrap();
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.05, ..Default::default() });
        let mut last = f64::INFINITY;
        for step in 0..200 {
            p.zero_grad();
            p.accumulate_grad(&[2.0 * p.to_vec()[0]]);
            opt.step(&[p.clone()]);
            let w = p.to_vec()[0].abs();
            if step > 20 {
                assert!(w <= last + 1e-12, "diverged at step {step}: {w} > {last}");
            }
            last = w;
        }
        assert!(p.to_vec()[0].abs() < 0.5);
    }
}
