//! AdamW with decoupled weight decay.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// Needed for f64 math under no_std; shadowed by inherent methods otherwise.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

use super::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment accumulators, one pair per parameter.
#[derive(Clone, Debug)]
pub struct AdamWState {
    pub hp: AdamWParams,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamWState {
    pub fn new(hp: AdamWParams) -> Self {
        AdamWState { hp, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One optimization step: bias-corrected moment update plus decoupled
/// weight decay, scaled per parameter by its `lr_scale`.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamWState,
) -> Result<()> {
    if state.hp.lr <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {}",
            state.hp.lr
        )));
    }
    // Validate everything before mutating anything.
    for (name, entry) in store.iter() {
        let grad = grads
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing gradient for {name}")))?;
        if grad.len() != entry.values.len() {
            return Err(Error::ShapeMismatch {
                op: "adamw_step",
                detail: format!(
                    "{name}: gradient has {} values, parameter {}",
                    grad.len(),
                    entry.values.len()
                ),
            });
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }

    state.step += 1;
    let t = state.step;
    let hp = state.hp;
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);

    for (name, entry) in store.iter_mut() {
        let grad = &grads[name];
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        let lr = hp.lr * entry.lr_scale;
        for i in 0..grad.len() {
            let g = grad[i];
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let update = m_hat / (v_hat.sqrt() + hp.epsilon) + hp.weight_decay * entry.values[i];
            entry.values[i] -= lr * update;
        }
    }
    Ok(())
}
