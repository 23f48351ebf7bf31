use serde::{Deserialize, Serialize};

use super::{Parameter, Scalar};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Advance the step counter. Call once per mini-batch, before `update`.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Apply one update to a parameter from its accumulated gradient, then
    /// clear the gradient.
    pub fn update<T: Scalar>(&self, p: &mut Parameter<T>) {
        let t = self.step.max(1) as i32;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let c1 = T::from_f64(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::from_f64(self.lr), T::from_f64(self.eps));
        let Parameter { value, grad, adam_m, adam_v } = p;
        for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(adam_m.data_mut()).zip(adam_v.data_mut()) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
        grad.fill(T::zero());
    }

    pub fn step_all<T: Scalar>(&mut self, params: Vec<&mut Parameter<T>>) {
        self.begin_step();
        for p in params {
            self.update(p);
        }
    }
}

/// Optimizer and early-stopping settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 5e-4, batch_size: 512, max_epochs: 100, patience: 20, seed: 0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn converges_on_quadratic() {
        let mut p = Parameter::new(Tensor::from_vec(&[1], vec![0.0f64]).unwrap());
        let mut adam = Adam::new(0.1);
        for _ in 0..1000 {
            let w = p.value.data()[0];
            p.grad.data_mut()[0] = 2.0 * (w - 3.0);
            adam.step_all(vec![&mut p]);
        }
        assert!((p.value.data()[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first step is lr·sign(g).
        let mut p = Parameter::new(Tensor::from_vec(&[2], vec![1.0f64, 1.0]).unwrap());
        p.grad.data_mut().copy_from_slice(&[5.0, -0.01]);
        let mut adam = Adam::new(0.01);
        adam.step_all(vec![&mut p]);
        assert!((p.value.data()[0] - 0.99).abs() < 1e-6);
        assert!((p.value.data()[1] - 1.01).abs() < 1e-5);
        assert_eq!(p.grad.data(), &[0.0, 0.0]);
    }
}
