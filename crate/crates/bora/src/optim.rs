//! SGD and AdamW over adapter parameters.
//!
//! AdamW uses decoupled weight decay (applied to the parameter before the
//! adaptive term) and bias-corrected moments. Weight decay defaults to zero.

use crate::adapter::AdapterParams;
use crate::error::{Error, Result};
use crate::grad::Gradients;
use serde::{Deserialize, Serialize};

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// AdamW moment buffers, flat over A, B, σ in that order.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub step: usize,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl OptimState {
    pub fn new(params: &AdapterParams) -> Self {
        let len = params.len();
        Self {
            step: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
        }
    }
}

fn check_finite(grads: &Gradients) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient entries".into()));
    }
    Ok(())
}

/// Applies `f(param, grad, flat_index)` over every trainable entry.
fn zip_entries(
    params: &mut AdapterParams,
    grads: &Gradients,
    mut f: impl FnMut(&mut f64, f64, usize),
) -> Result<()> {
    if params.a.data().len() != grads.da.data().len()
        || params.b.data().len() != grads.db.data().len()
        || params.sigma.as_ref().map(Vec::len) != grads.dsigma.as_ref().map(Vec::len)
    {
        return Err(Error::Shape("gradient shapes do not mirror parameters".into()));
    }
    let mut idx = 0;
    for (p, &g) in params.a.data_mut().iter_mut().zip(grads.da.data()) {
        f(p, g, idx);
        idx += 1;
    }
    for (p, &g) in params.b.data_mut().iter_mut().zip(grads.db.data()) {
        f(p, g, idx);
        idx += 1;
    }
    if let (Some(s), Some(ds)) = (params.sigma.as_mut(), grads.dsigma.as_ref()) {
        for (p, &g) in s.iter_mut().zip(ds) {
            f(p, g, idx);
            idx += 1;
        }
    }
    Ok(())
}

/// Plain gradient descent: `p ← p − lr·g`.
pub fn sgd_step(params: &mut AdapterParams, grads: &Gradients, lr: f64) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::Argument(format!("learning rate must be positive, got {lr}")));
    }
    check_finite(grads)?;
    zip_entries(params, grads, |p, g, _| *p -= lr * g)
}

/// One AdamW update. Decay is decoupled: `p ← p − lr·λ·p` before the
/// bias-corrected adaptive term `lr · m̂ / (√v̂ + ε)`.
pub fn adamw_step(
    params: &mut AdapterParams,
    grads: &Gradients,
    state: &mut OptimState,
    hyper: &AdamWConfig,
) -> Result<()> {
    if hyper.lr <= 0.0 {
        return Err(Error::Argument(format!(
            "learning rate must be positive, got {}",
            hyper.lr
        )));
    }
    if state.first_moment.len() != params.len() {
        return Err(Error::Shape(format!(
            "optimizer state holds {} entries, parameters hold {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    check_finite(grads)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let m = &mut state.first_moment;
    let v = &mut state.second_moment;
    zip_entries(params, grads, |p, g, i| {
        *p -= hyper.lr * hyper.weight_decay * *p;
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        *p -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    })
}
