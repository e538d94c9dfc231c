//! Adam optimiser with per-parameter moment state.

use super::tensor::Tensor;

/// A trainable tensor plus its first and second moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    m: Tensor,
    v: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let (r, c) = value.shape();
        Param { value, m: Tensor::zeros(r, c), v: Tensor::zeros(r, c) }
    }

    pub fn moments(&self) -> (&Tensor, &Tensor) {
        (&self.m, &self.v)
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Advances the shared step counter; call once per optimisation step,
    /// then [`Adam::update`] each parameter with its gradient.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&self, p: &mut Param, grad: &Tensor) {
        assert_eq!(p.value.shape(), grad.shape(), "gradient shape mismatch");
        assert!(self.t > 0, "begin_step before update");
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..p.value.len() {
            let g = grad.data()[i];
            let m = self.beta1 * p.m.data()[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * p.v.data()[i] + (1.0 - self.beta2) * g * g;
            p.m.data_mut()[i] = m;
            p.v.data_mut()[i] = v;
            let m_hat = m / c1;
            let v_hat = v / c2;
            p.value.data_mut()[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Param::new(Tensor::row(&[1.0, -2.0, 3.0]));
        let before = p.value.clone();
        let mut adam = Adam::new(1e-2);
        adam.begin_step();
        adam.update(&mut p, &Tensor::zeros(1, 3));
        assert_eq!(p.value, before);
    }

    #[test]
    fn first_step_moves_by_signed_learning_rate() {
        let mut p = Param::new(Tensor::row(&[0.0, 0.0]));
        let mut adam = Adam::new(1e-3);
        adam.begin_step();
        adam.update(&mut p, &Tensor::row(&[0.5, -3.0]));
        // bias-corrected first step is -lr * g / (|g| + eps) = -lr * sign(g)
        assert!((p.value.get(0, 0) + 1e-3).abs() < 1e-8);
        assert!((p.value.get(0, 1) - 1e-3).abs() < 1e-8);
    }

    #[test]
    fn repeated_steps_decay_moments_deterministically() {
        let run = || {
            let mut p = Param::new(Tensor::row(&[1.0]));
            let mut adam = Adam::new(1e-2);
            for i in 0..50 {
                adam.begin_step();
                adam.update(&mut p, &Tensor::row(&[(i as f64 * 0.37).sin()]));
            }
            p.value.get(0, 0)
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
