use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Adam with bias correction. Moment buffers are keyed by parameter name and
/// persist across steps.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: AdamState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: BTreeMap<String, Vec<f64>>,
    pub second_moment: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            state: AdamState::default(),
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn set_state(&mut self, state: AdamState) {
        self.state = state;
    }

    pub fn steps_taken(&self) -> u64 {
        self.state.step
    }

    /// One update of every parameter. Fails without touching anything if
    /// some parameter has no gradient.
    pub fn step(&mut self, params: &[(String, Tensor)]) -> Result<()> {
        let mut grads = Vec::with_capacity(params.len());
        for (name, p) in params {
            grads.push(p.grad().ok_or_else(|| Error::MissingGrad(name.clone()))?);
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for ((name, p), g) in params.iter().zip(grads) {
            let m = self
                .state
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for (mi, gi) in m.iter_mut().zip(&g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self
                .state
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for (vi, gi) in v.iter_mut().zip(&g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let m = &self.state.first_moment[name];
            let v = &self.state.second_moment[name];
            let mut data = p.data_mut();
            for ((x, mi), vi) in data.iter_mut().zip(m).zip(v) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64, g: f64) -> Tensor {
        let p = Tensor::param(&[], vec![v]).unwrap();
        p.scale(g).backward().unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let p = scalar_param(0.0, 1.0);
        let mut adam = Adam::new(0.1);
        adam.step(&[("p".into(), p.clone())]).unwrap();
        assert!((p.item() + 0.1).abs() < 1e-6, "{}", p.item());
    }

    #[test]
    fn zero_grad_leaves_param() {
        let p = scalar_param(0.5, 0.0);
        let mut adam = Adam::new(0.1);
        adam.step(&[("p".into(), p.clone())]).unwrap();
        assert_eq!(p.item(), 0.5);
    }

    #[test]
    fn repeated_grads_move_monotonically() {
        // Hand simulation: with a constant gradient g, m_hat = g and
        // v_hat = g^2 at every step, so each step is lr * g / (|g| + eps).
        let p = Tensor::param(&[], vec![1.0]).unwrap();
        let mut adam = Adam::new(0.05);
        let mut prev = p.item();
        let mut expected = 1.0;
        for _ in 0..2 {
            p.zero_grad();
            p.scale(2.0).backward().unwrap();
            adam.step(&[("p".into(), p.clone())]).unwrap();
            expected -= 0.05 * 2.0 / (2.0 + 1e-8);
            assert!(p.item() < prev);
            assert!((p.item() - expected).abs() < 1e-12);
            prev = p.item();
        }
    }

    #[test]
    fn missing_grad_names_parameter() {
        let p = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let err = Adam::new(0.1).step(&[("theta".into(), p)]).unwrap_err();
        assert!(err.to_string().contains("theta"));
    }
}
