use std::collections::HashMap;

use super::{Param, ParamId, ParamStore};
use crate::error::{G5Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2: `wd * theta` is added to the raw gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            weight_decay,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(G5Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update; clears the gradient afterwards.
pub fn adam_step(param: &mut Param, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let grad = param.grad.take().ok_or_else(|| {
        G5Error::Contract(format!("adam_step on '{}' without a gradient", param.name))
    })?;
    if state.m.len() != grad.len() {
        return Err(G5Error::Shape(format!(
            "Adam state for '{}' has {} entries, parameter has {}",
            param.name,
            state.m.len(),
            grad.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let theta = param.value.data_mut();
    for i in 0..theta.len() {
        let g = grad[i] + cfg.weight_decay * theta[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over a whole [`ParamStore`]. Only parameters that received a gradient
/// since the last step are touched.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    states: HashMap<ParamId, AdamState>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, store: &mut ParamStore, cfg: &AdamConfig) -> Result<usize> {
        let ids: Vec<ParamId> = store
            .iter()
            .filter(|(_, p)| p.grad.is_some())
            .map(|(id, _)| id)
            .collect();
        for &id in &ids {
            let p = store.get_mut(id);
            let state = self
                .states
                .entry(id)
                .or_insert_with(|| AdamState::new(p.value.len()));
            adam_step(p, state, cfg)?;
        }
        Ok(ids.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use approx::assert_relative_eq;

    fn param(v: f64, g: Option<f64>) -> Param {
        Param {
            name: "p".into(),
            value: Tensor::scalar(v),
            grad: g.map(|g| vec![g]),
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = param(0.7, Some(0.0));
        let mut s = AdamState::new(1);
        adam_step(&mut p, &mut s, &AdamConfig::with_lr(0.01, 0.0)).unwrap();
        assert_eq!(p.value.data(), &[0.7]);
        assert!(p.grad.is_none());
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m = 0.2, v = 0.004, m_hat = 2, v_hat = 4 => theta - 0.01 * 2 / (2 + eps)
        let mut p = param(1.0, Some(2.0));
        let mut s = AdamState::new(1);
        adam_step(&mut p, &mut s, &AdamConfig::with_lr(0.01, 0.0)).unwrap();
        assert_relative_eq!(p.value.data()[0], 0.99, epsilon = 1e-9);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let cfg = AdamConfig::with_lr(0.05, 5e-4);
        let (mut a, mut b) = (param(0.3, Some(-1.5)), param(0.3, Some(-1.5)));
        let (mut sa, mut sb) = (AdamState::new(1), AdamState::new(1));
        adam_step(&mut a, &mut sa, &cfg).unwrap();
        adam_step(&mut b, &mut sb, &cfg).unwrap();
        assert_eq!(a.value.data()[0].to_bits(), b.value.data()[0].to_bits());
        assert_eq!(sa, sb);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut p = param(1.0, None);
        let err = adam_step(&mut p, &mut AdamState::new(1), &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, G5Error::Contract(_)));
    }

    #[test]
    fn zero_lr_is_bit_identical() {
        let mut p = param(-0.123456789, Some(3.0));
        let mut s = AdamState::new(1);
        let before = p.value.data()[0].to_bits();
        adam_step(&mut p, &mut s, &AdamConfig::with_lr(0.0, 5e-4)).unwrap();
        assert_eq!(p.value.data()[0].to_bits(), before);
    }
}
