use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::params::{Grads, Params};

/// AdamW hyperparameters (decoupled weight decay).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

impl AdamW {
    /// One update of every parameter. Parameters missing from `grads` are
    /// treated as having zero gradient and still decay.
    pub fn step(&self, params: &mut Params, grads: &Grads, state: &mut AdamState) {
        state.step += 1;
        let t = state.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let len = p.len();
            let m = state
                .first
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; len]);
            let v = state
                .second
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; len]);
            let g = grads.get(name).map(|t| t.data());
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g[i]);
                *x *= 1.0 - self.lr * self.weight_decay;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
