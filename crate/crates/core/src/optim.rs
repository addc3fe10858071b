//! Adam with global-norm gradient clipping and per-group learning rates.

use alloc::vec::Vec;
// Unused whenever std is in the build graph; needed for no_std builds.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::model::{ParamGroup, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr_graph: f64,
    pub lr_other: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Maximum global L2 norm of the gradient; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr_graph: 0.01, lr_other: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip: Some(5.0) }
    }
}

impl AdamConfig {
    pub fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::GraphLearner => self.lr_graph,
            ParamGroup::Other => self.lr_other,
        }
    }
}

/// First and second moments, one pair per parameter, plus the step count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Clips `grads` in place, then applies one Adam update. Returns the
/// pre-clip global norm. Non-finite gradients leave everything untouched.
pub fn adam_step(cfg: &AdamConfig, state: &mut AdamState, params: &mut ParamStore, grads: &mut [Tensor]) -> Result<f64> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        bail!(Shape, "{} gradients and {} moment pairs for {} parameters", grads.len(), state.m.len(), params.len());
    }
    for (g, p) in grads.iter().zip(params.iter()) {
        if g.shape() != p.value.shape() {
            bail!(Shape, "gradient {:?} for parameter {} {:?}", g.shape(), p.name, p.value.shape());
        }
        if !g.is_finite() {
            bail!(NonFinite, "gradient of {} is not finite", p.name);
        }
    }
    let norm = global_norm(grads);
    if let Some(max) = cfg.clip {
        if norm > max {
            let s = max / norm;
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads.iter()).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        let lr = cfg.lr(p.group);
        let (pv, gd) = (p.value.data_mut(), g.data());
        for k in 0..gd.len() {
            let mk = &mut m.data_mut()[k];
            *mk = cfg.beta1 * *mk + (1.0 - cfg.beta1) * gd[k];
            let vk = &mut v.data_mut()[k];
            *vk = cfg.beta2 * *vk + (1.0 - cfg.beta2) * gd[k] * gd[k];
            let m_hat = m.data()[k] / bc1;
            let v_hat = v.data()[k] / bc2;
            pv[k] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[(&str, ParamGroup, f64)]) -> ParamStore {
        let mut s = ParamStore::default();
        for (name, group, v) in values {
            s.push(name, *group, Tensor::scalar(*v));
        }
        s
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut params = store(&[("a", ParamGroup::Other, 1.5), ("b", ParamGroup::GraphLearner, -2.0)]);
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let mut grads = [Tensor::scalar(0.0), Tensor::scalar(0.0)];
        adam_step(&AdamConfig::default(), &mut state, &mut params, &mut grads).unwrap();
        assert_eq!(params, before);
        assert!(state.m.iter().chain(&state.v).all(|t| t.item() == 0.0));
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_the_sign() {
        let mut params = store(&[("a", ParamGroup::Other, 0.0), ("b", ParamGroup::GraphLearner, 0.0)]);
        let mut state = AdamState::new(&params);
        let mut grads = [Tensor::scalar(0.3), Tensor::scalar(-2.0)];
        adam_step(&AdamConfig::default(), &mut state, &mut params, &mut grads).unwrap();
        assert!((params.get("a").unwrap().item() + 0.001).abs() < 1e-9);
        assert!((params.get("b").unwrap().item() - 0.01).abs() < 1e-9);
    }

    #[test]
    fn clipping_halves_norm_ten_gradient() {
        let mut params = store(&[("a", ParamGroup::Other, 0.0), ("b", ParamGroup::Other, 0.0)]);
        let mut state = AdamState::new(&params);
        let mut grads = [Tensor::scalar(6.0), Tensor::scalar(8.0)];
        let norm = adam_step(&AdamConfig::default(), &mut state, &mut params, &mut grads).unwrap();
        assert_eq!(norm, 10.0);
        assert_eq!(grads[0].item(), 3.0);
        assert_eq!(grads[1].item(), 4.0);
        assert!((state.m[0].item() - 0.1 * 3.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_without_side_effects() {
        let mut params = store(&[("a", ParamGroup::Other, 1.0)]);
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let mut grads = [Tensor::scalar(f64::NAN)];
        assert!(adam_step(&AdamConfig::default(), &mut state, &mut params, &mut grads).is_err());
        assert_eq!(params, before);
        assert_eq!(state.step, 0);
    }
}
