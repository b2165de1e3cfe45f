//! Adam with bias correction.
//!
//! ```text
//! m = b1*m + (1-b1)*g
//! v = b2*v + (1-b2)*g^2
//! p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
//! ```
//!
//! Parameters whose gradient buffer is absent (not touched since the last
//! step) are skipped, and keep their own step count for bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    param_steps: Vec<u64>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |s: &ParamStore| s.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(store),
            v: zeros(store),
            param_steps: vec![0; store.len()],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::usage("optimizer state does not match parameter store"));
        }
        if !store.has_grads() {
            return Err(Error::usage("adam step with no gradients; run backward first"));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let t = store.get_mut(id);
            let Some(grad) = t.grad.take() else { continue };
            self.param_steps[i] += 1;
            let n = self.param_steps[i] as i32;
            let c1 = 1.0 - beta1.powi(n);
            let c2 = 1.0 - beta2.powi(n);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in t.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        self.step += 1;
        Ok(())
    }
}
