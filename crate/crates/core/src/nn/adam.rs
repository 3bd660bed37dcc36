//! Adam optimizer over flat parameter vectors.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
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

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    weights: &mut [f64],
    gradients: &[f64],
    state: &mut AdamState,
    params: AdamParams,
) -> Result<()> {
    if gradients.len() != weights.len()
        || state.m.len() != weights.len()
        || state.v.len() != weights.len()
    {
        return Err(Error::Shape(format!(
            "adam: {} weights, {} gradients, {} moments",
            weights.len(),
            gradients.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - params.beta1.powi(t);
    let c2 = 1.0 - params.beta2.powi(t);
    for i in 0..weights.len() {
        let g = gradients[i];
        state.m[i] = params.beta1 * state.m[i] + (1.0 - params.beta1) * g;
        state.v[i] = params.beta2 * state.v[i] + (1.0 - params.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        weights[i] -= params.lr * m_hat / (v_hat.sqrt() + params.eps);
    }
    Ok(())
}
