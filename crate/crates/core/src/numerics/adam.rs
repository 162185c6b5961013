use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for every parameter tensor, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        AdamState {
            config,
            step: 0,
            first: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            second: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update. Gradients are read, not cleared.
pub fn adam_step<T: Scalar>(params: &mut [Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != state.first.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} tensors, got {}",
            state.first.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.grad.is_none() {
            return Err(Error::Gradient(format!("parameter {i} has no gradient")));
        }
        if p.len() != state.first[i].len() {
            return Err(Error::Shape(format!("parameter {i} changed size")));
        }
    }
    state.step += 1;
    let c = state.config;
    let f = T::from_f64_lossy;
    let (b1, b2) = (f(c.beta1), f(c.beta2));
    let bc1 = f(1.0 - c.beta1.powi(state.step as i32));
    let bc2 = f(1.0 - c.beta2.powi(state.step as i32));
    let (lr, eps) = (f(c.learning_rate), f(c.epsilon));
    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.grad.as_ref().expect("checked");
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for j in 0..p.values.len() {
            let g = grad[j];
            m[j] = b1 * m[j] + (T::one() - b1) * g;
            v[j] = b2 * v[j] + (T::one() - b2) * g * g;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p.values[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
