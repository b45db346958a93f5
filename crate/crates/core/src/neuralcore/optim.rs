use crate::error::{LtcError, Result};
use crate::math;

use super::ModelParams;

/// AdamW hyperparameters. Defaults: lr 1e-2, weight decay 0.05.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(LtcError::InvalidConfig("AdamW hyperparameters out of range"))
        }
    }
}

/// Moment accumulators mirror the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    first_moment: ModelParams,
    second_moment: ModelParams,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `w ← w − lr·wd·w − lr·m̂/(√v̂ + eps)`.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.first_moment) {
        return Err(LtcError::ShapeMismatch("AdamW parameters/gradients"));
    }
    if !grads.is_finite() {
        return Err(LtcError::NonFinite("gradient"));
    }
    state.step += 1;
    let AdamWConfig {
        learning_rate: lr,
        weight_decay: wd,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - libm::pow(beta1, t as f64);
    let bias2 = 1.0 - libm::pow(beta2, t as f64);

    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.first_moment.tensors_mut())
        .zip(state.second_moment.tensors_mut());
    for (((w, g), m), v) in tensors {
        for i in 0..w.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            w[i] -= lr * wd * w[i];
            w[i] -= lr * m_hat / (math::sqrt(v_hat) + epsilon);
        }
    }
    Ok(())
}
