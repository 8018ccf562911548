//! Adam with bias-corrected moment estimates.

use crate::nn::Param;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update from the gradients currently stored in `params`. The
    /// parameter list must keep the same order and sizes between calls.
    pub fn step(&mut self, params: Vec<&mut Param<T>>) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed between steps");
        self.step += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let step_size = T::of(self.lr / (1.0 - self.beta1.powi(self.step)));
        let bc2 = T::of((1.0 - self.beta2.powi(self.step)).sqrt());
        let eps = T::of(self.eps);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), mi), vi) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                *w -= step_size * *mi / (vi.sqrt() / bc2 + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Param::<f64>::zeros("w", &[3]);
        p.grad = vec![2.0, -0.5, 0.0];
        let mut opt = Adam::new(0.001);
        opt.step(vec![&mut p]);
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        assert!((p.value[0] + 0.001).abs() < 1e-9);
        assert!((p.value[1] - 0.001).abs() < 1e-9);
        assert_eq!(p.value[2], 0.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Param::<f64>::filled("w", &[1], 3.0);
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            p.grad[0] = 2.0 * (p.value[0] - 1.0);
            opt.step(vec![&mut p]);
        }
        assert!((p.value[0] - 1.0).abs() < 1e-2);
    }
}
