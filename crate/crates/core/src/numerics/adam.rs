use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::params::ParameterSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

/// First and second moment estimates for every parameter of one set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: IndexMap<String, Tensor>,
    pub second: IndexMap<String, Tensor>,
}

impl AdamState {
    pub fn new(params: &ParameterSet, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(name, p)| (name.to_string(), Tensor::zeros(p.value.shape()))).collect();
        Self { config, step: 0, first: zeros(), second: zeros() }
    }
}

/// One bias-corrected Adam update from the gradients currently stored in
/// `params`. Fails before touching anything if a gradient is non-finite, and
/// after the update if a parameter became non-finite.
pub fn adam_step(params: &mut ParameterSet, state: &mut AdamState) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(Error::shape("adam_step", format!("{} moments", params.len()), state.first.len()));
    }
    for (name, p) in params.iter() {
        let m = state.first.get(name).ok_or_else(|| Error::MissingParameter(name.to_string()))?;
        let v = state.second.get(name).ok_or_else(|| Error::MissingParameter(name.to_string()))?;
        if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
            return Err(Error::shape(
                format!("adam_step `{name}`"),
                format!("{:?}", p.value.shape()),
                format!("{:?}", m.shape()),
            ));
        }
        if !p.grad.is_finite() {
            return Err(Error::NonFinite(format!("gradient of `{name}`")));
        }
    }

    state.step += 1;
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    for (name, p) in params.iter_mut() {
        let m = state.first.get_mut(name).expect("checked above");
        let v = state.second.get_mut(name).expect("checked above");
        let values = p.value.data_mut();
        for (((w, &g), m), v) in values.iter_mut().zip(p.grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        if !p.value.is_finite() {
            return Err(Error::NonFinite(format!("parameter `{name}` after update {}", state.step)));
        }
    }
    Ok(())
}
