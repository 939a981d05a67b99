//! Adam with bias correction, keyed by parameter name so a trainable set can
//! change between runs without state collisions.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// First/second moment buffers plus the shared step count, all starting at
/// zero.
#[derive(Debug, Default)]
pub struct AdamState {
    step: u64,
    slots: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One in-place update over the given named parameters. Parameters whose
    /// grad buffer is absent are treated as having a zero gradient.
    pub fn step(&mut self, cfg: &AdamConfig, params: &mut [(&str, &mut Tensor)]) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        for (name, tensor) in params.iter_mut() {
            let n = tensor.data.len();
            if let Some(g) = &tensor.grad {
                if g.len() != n {
                    return Err(Error::invalid(format!(
                        "adam: gradient length {} does not match parameter `{}` of {} elements",
                        g.len(),
                        name,
                        n
                    )));
                }
            }
            let slot = self.slots.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            if slot.m.len() != n {
                return Err(Error::invalid(format!(
                    "adam: state for `{}` has {} elements, parameter has {}",
                    name,
                    slot.m.len(),
                    n
                )));
            }
            let zero = vec![0.0; n];
            let grad = tensor.grad.as_deref().unwrap_or(&zero);
            for i in 0..n {
                slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * grad[i];
                slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                let m_hat = slot.m[i] / bias1;
                let v_hat = slot.v[i] / bias2;
                tensor.data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // with m_hat = g and v_hat = g^2, the first update is lr*g/(|g|+eps)
        let cfg = AdamConfig { lr: 0.01, eps: 1e-12, ..AdamConfig::with_lr(0.01) };
        let mut t = Tensor::full(vec![3], 1.0);
        t.grad = Some(vec![3.0, -0.5, 7.0]);
        let mut state = AdamState::new();
        state.step(&cfg, &mut [("p", &mut t)]).unwrap();
        let expected = [1.0 - 0.01, 1.0 + 0.01, 1.0 - 0.01];
        for (a, e) in t.data.iter().zip(expected.iter()) {
            assert!((a - e).abs() < 1e-9, "{a} vs {e}");
        }
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut t = Tensor::full(vec![4], 2.5);
        t.grad = Some(vec![0.0; 4]);
        let before = t.clone();
        let mut state = AdamState::new();
        state.step(&cfg, &mut [("p", &mut t)]).unwrap();
        assert!(t.bitwise_eq(&before));

        // absent grad buffer behaves the same
        let mut u = Tensor::full(vec![4], 2.5);
        state.step(&cfg, &mut [("q", &mut u)]).unwrap();
        assert!(u.bitwise_eq(&before));
    }

    #[test]
    fn two_steps_match_scalar_recurrence_oracle() {
        // independent scalar recurrence, computed by hand
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let g = 2.0;
        let mut x = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1_pow(b1, t));
            let v_hat = v / (1.0 - b1_pow(b2, t));
            x -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let cfg = AdamConfig { lr, beta1: b1, beta2: b2, eps };
        let mut t = Tensor::full(vec![1], 1.0);
        let mut state = AdamState::new();
        for _ in 0..2 {
            t.grad = Some(vec![g]);
            state.step(&cfg, &mut [("p", &mut t)]).unwrap();
        }
        assert!((t.data[0] - x).abs() < 1e-12, "{} vs {}", t.data[0], x);
    }

    fn b1_pow(b: f64, t: usize) -> f64 {
        let mut p = 1.0;
        for _ in 0..t {
            p *= b;
        }
        p
    }

    #[test]
    fn grad_length_mismatch_rejected() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut t = Tensor::full(vec![3], 1.0);
        t.grad = Some(vec![1.0; 2]);
        let mut state = AdamState::new();
        assert!(state.step(&cfg, &mut [("p", &mut t)]).is_err());
    }
}
