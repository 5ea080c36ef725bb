//! AdamW with decoupled weight decay and bias-corrected moments.

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.01,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Moments {
    pub fn zeros_like(params: &ParamStore) -> Self {
        let z: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self { m: z.clone(), v: z }
    }
}

/// One update at 1-based `step`:
///
/// ```text
/// θ ← θ − lr·wd·θ
/// m ← β1·m + (1 − β1)·g,   v ← β2·v + (1 − β2)·g²
/// θ ← θ − lr · (m / (1 − β1^step)) / (√(v / (1 − β2^step)) + eps)
/// ```
///
/// Frozen entries are left untouched, including by weight decay.
pub fn adamw_step(
    params: &mut ParamStore,
    grads: &Gradients,
    moments: &mut Moments,
    cfg: &AdamWConfig,
    step: usize,
) {
    assert!(step >= 1, "optimizer steps are 1-based");
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let frozen: Vec<Option<Vec<bool>>> = (0..params.len())
        .map(|i| params.frozen_mask(ParamId(i)).map(<[bool]>::to_vec))
        .collect();
    for (i, t) in params.tensors_mut().iter_mut().enumerate() {
        let g = &grads.tensors[i];
        let (m, v) = (&mut moments.m[i], &mut moments.v[i]);
        for j in 0..t.data.len() {
            if frozen[i].as_ref().is_some_and(|f| f[j]) {
                continue;
            }
            let p = &mut t.data[j];
            *p -= cfg.learning_rate * cfg.weight_decay * *p;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}
