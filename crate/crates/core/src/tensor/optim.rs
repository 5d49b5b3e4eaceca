use std::collections::BTreeMap;

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// AdamW state: moments per parameter plus hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl OptimState {
    pub fn new(lr: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be ≥ 0, got {weight_decay}"
            )));
        }
        Ok(Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update with decoupled weight decay, then zeroes
/// every gradient.
pub fn adam_step(params: &mut ParamSet, state: &mut OptimState) -> Result<()> {
    if let Some(name) = state.first.keys().find(|k| !params.contains(k)) {
        return Err(Error::Integrity(format!(
            "optimizer tracks `{name}` but the parameter set has no gradient for it"
        )));
    }
    for (name, _, grad) in params.iter_mut() {
        if !grad.is_finite() {
            return Err(Error::Numeric(format!(
                "gradient of `{name}` is not finite"
            )));
        }
        if let Some(m) = state.first.get(name) {
            if m.shape() != grad.shape() {
                return Err(Error::Integrity(format!(
                    "moment shape {:?} does not match parameter `{name}` {:?}",
                    m.shape(),
                    grad.shape()
                )));
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, wd, eps) = (
        state.beta1,
        state.beta2,
        state.lr,
        state.weight_decay,
        state.eps,
    );

    for (name, value, grad) in params.iter_mut() {
        let m = state
            .first
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        let v = state
            .second
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        for (((w, &g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * wd * *w;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        grad.data_mut().fill(0.0);
    }
    Ok(())
}
