use serde::{Deserialize, Serialize};

use super::{NetworkParams, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: NetworkParams<T>,
    pub v: NetworkParams<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &NetworkParams<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every trainable tensor.
pub fn adam_step<T: Real>(params: &mut NetworkParams<T>, grads: &NetworkParams<T>, state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    if params.dims() != grads.dims() || params.dims() != state.m.dims() {
        return Err(Error::Shape("optimizer state does not match the parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let slots = params.slots_mut();
    let gs = grads.slots();
    let ms = state.m.slots_mut();
    let vs = state.v.slots_mut();
    for (((p, g), m), v) in slots.into_iter().zip(gs).zip(ms).zip(vs) {
        if !p.trainable {
            continue;
        }
        for (((w, &gi), mi), vi) in p.data.iter_mut().zip(g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
