use std::collections::BTreeMap;

use crate::gradcore::{GradError, ParamSet, Tensor};

/// First/second-moment state of the Adam optimizer, keyed by parameter name.
pub struct AdamState {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    slots: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

impl AdamState {
    /// β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            slots: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update from the gradients currently accumulated in
/// `params`. Errors on a non-finite gradient, naming the parameter.
pub fn adam_step(
    params: &mut ParamSet,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), GradError> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let grad = params.grad(&name)?.to_vec();
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(GradError::NonFiniteGrad(name));
        }
        let numel = grad.len();
        let (m, v) = state
            .slots
            .entry(name.clone())
            .or_insert_with(|| (vec![0.0; numel], vec![0.0; numel]));
        let value = params.value(&name)?;
        let mut updated = value.data().to_vec();
        for i in 0..numel {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            updated[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        let shape = value.shape().to_vec();
        params.set_value(&name, Tensor::new(shape, updated)?)?;
    }
    Ok(())
}
