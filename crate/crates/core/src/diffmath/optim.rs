use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: each step multiplies parameters by `1 - lr * weight_decay`.
    pub weight_decay: f64,
    /// Rescale the gradient when its norm exceeds this value.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            max_grad_norm: None,
        }
    }
}

/// Moment accumulators for Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct OptimState<F> {
    pub config: AdamConfig,
    first: Vec<F>,
    second: Vec<F>,
    step: u64,
}

impl<F: Scalar> OptimState<F> {
    pub fn new(config: AdamConfig, param_len: usize) -> Self {
        OptimState {
            config,
            first: vec![F::zero(); param_len],
            second: vec![F::zero(); param_len],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }
}

/// One optimizer update in place. A non-finite gradient leaves both the
/// parameters and the state untouched.
pub fn optimizer_step<F: Scalar>(params: &mut ParamVector<F>, grads: &ParamVector<F>, state: &mut OptimState<F>) -> Result<()> {
    if !params.same_layout(grads) || state.first.len() != params.len() {
        return Err(Error::shape("optimizer_step", params.len(), grads.len()));
    }
    if let Some(i) = grads.values().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient coordinate {i}")));
    }
    let c = state.config;
    let mut clip = F::one();
    if let Some(max) = c.max_grad_norm {
        let norm = grads.norm();
        let max = F::of(max);
        if norm > max {
            clip = max / norm;
        }
    }
    state.step += 1;
    let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
    let t = state.step as i32;
    let bias1 = F::one() - b1.powi(t);
    let bias2 = F::one() - b2.powi(t);
    let lr = F::of(c.lr);
    let decay = F::one() - lr * F::of(c.weight_decay);
    let eps = F::of(c.eps);
    for (((p, &g), m), v) in params
        .values_mut()
        .iter_mut()
        .zip(grads.values())
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let g = g * clip;
        *m = b1 * *m + (F::one() - b1) * g;
        *v = b2 * *v + (F::one() - b2) * g * g;
        let mhat = *m / bias1;
        let vhat = *v / bias2;
        *p = *p * decay - lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}
