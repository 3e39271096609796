use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Tensor,
    pub v: Tensor,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(shape: &[usize], config: AdamConfig) -> Self {
        AdamState {
            step_count: 0,
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            config,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState) {
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam over every tensor of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        Adam {
            states: store
                .values()
                .iter()
                .map(|v| AdamState::new(v.shape(), config))
                .collect(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.states.iter_mut().for_each(|s| s.config.lr = lr);
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        let (values, grads) = store.parts_mut();
        for ((p, g), s) in values.iter_mut().zip(grads.iter()).zip(&mut self.states) {
            adam_step(p, g, s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(1.0);
        let g = Tensor::scalar(1.0);
        let mut s = AdamState::new(&[1], AdamConfig::with_lr(0.1));
        adam_step(&mut p, &g, &mut s);
        let update = p.data()[0] - 1.0;
        assert!((update + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = Tensor::vector(vec![0.3, -2.0, 5.0]);
        let before = p.clone();
        let mut s = AdamState::new(&[3], AdamConfig::default());
        for _ in 0..5 {
            adam_step(&mut p, &Tensor::zeros(&[3]), &mut s);
        }
        assert_eq!(p, before);
        assert_eq!(s.step_count, 5);
    }

    #[test]
    fn constant_gradient_steps_do_not_grow() {
        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(0.7);
        let mut s = AdamState::new(&[1], AdamConfig::with_lr(0.01));
        adam_step(&mut p, &g, &mut s);
        let u1 = p.data()[0].abs();
        let before = p.data()[0];
        adam_step(&mut p, &g, &mut s);
        let u2 = (p.data()[0] - before).abs();
        assert!(u2 <= u1 * (1.0 + 1e-6));
    }
}
