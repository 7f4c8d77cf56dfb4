use super::backward::Gradients;
use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamId};

/// Adam moments and hyperparameters. Weight decay is decoupled from the
/// gradient and applies to weight matrices only.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams, lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Result<Self> {
        let bad = |name: &str, v: f64| Error::Config(format!("invalid Adam {name}: {v}"));
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(bad("learning rate", lr));
        }
        if !(0.0..1.0).contains(&beta1) {
            return Err(bad("beta1", beta1));
        }
        if !(0.0..1.0).contains(&beta2) {
            return Err(bad("beta2", beta2));
        }
        if !(eps > 0.0) {
            return Err(bad("epsilon", eps));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(bad("weight decay", weight_decay));
        }
        let zeros = || ParamId::ALL.iter().map(|&id| vec![0.0; params.tensor(id).len()]).collect();
        Ok(Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        })
    }
}

/// One bias-corrected Adam update of every trainable tensor.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients passed to the optimizer".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (slot, &id) in ParamId::ALL.iter().enumerate() {
        let g = grads.tensor(id);
        let decay = if id.is_weight() { state.weight_decay } else { 0.0 };
        let m = &mut state.m[slot];
        let v = &mut state.v[slot];
        let p = params.tensor_mut(id);
        for i in 0..p.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let step = (m[i] / c1) / ((v[i] / c2).sqrt() + state.eps);
            p[i] -= state.lr * (step + decay * p[i]);
        }
    }
    Ok(())
}
