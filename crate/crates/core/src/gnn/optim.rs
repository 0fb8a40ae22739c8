use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};

/// Adaptive-moment optimizer settings with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

/// First/second moment accumulators and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: ModelParams,
    v: ModelParams,
    step: u64,
}

impl AdamState {
    pub fn new(like: &ModelParams) -> Self {
        AdamState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One optimizer step:
/// `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`.
pub fn optimizer_step(
    params: &mut ModelParams,
    grad: &ModelParams,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if !grad.is_finite() {
        return Err(Error::Diverged { round: None });
    }
    if !params.same_shape(grad) || !params.same_shape(&state.m) {
        return Err(Error::Contract("optimizer shape mismatch".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let moments = state.m.values_mut().zip(state.v.values_mut());
    for ((p, g), (m, v)) in params.values_mut().zip(grad.values()).zip(moments) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *p);
    }
    if !params.is_finite() {
        return Err(Error::Diverged { round: None });
    }
    Ok(())
}
