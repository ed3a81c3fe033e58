use serde::{Deserialize, Serialize};

use crate::autodiff::{all_finite, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        AdamState {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update from the gradients held in `store`.
/// Parameters without a gradient buffer are left alone.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, config: &AdamConfig) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::shape(
            "adam_step",
            format!("state for {} tensors, store has {}", state.m.len(), store.len()),
        ));
    }
    for id in store.ids() {
        let t = store.get(id);
        if state.m[id.index()].len() != t.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{}: state {} vs parameter {}", store.name(id), state.m[id.index()].len(), t.len()),
            ));
        }
        if let Some(g) = t.grad() {
            if !all_finite(g) {
                return Err(Error::NonFinite { op: "adam_step" });
            }
        }
    }

    state.t += 1;
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = *config;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for id in store.ids().collect::<Vec<_>>() {
        let t = store.get_mut(id);
        if !t.requires_grad() {
            continue;
        }
        let Some(g) = t.grad().map(<[f64]>::to_vec) else { continue };
        let m = &mut state.m[id.index()];
        let v = &mut state.v[id.index()];
        for (k, x) in t.values_mut().iter_mut().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for id in store.ids() {
        if let Some(g) = store.get(id).grad() {
            sq += g.iter().map(|x| x * x).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let f = max_norm / norm;
        for id in store.ids().collect::<Vec<_>>() {
            if store.get(id).grad().is_some() {
                store.get_mut(id).grad_mut().iter_mut().for_each(|g| *g *= f);
            }
        }
    }
    norm
}
