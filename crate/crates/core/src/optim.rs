//! AdamW with decoupled weight decay and the cosine-annealed learning rate.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub lr0: f64,
    pub weight_decay: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            weight_decay: 1e-5,
            lr_min: 5e-6,
            batch_size: 32,
            max_epochs: 1000,
            patience: 20,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    /// Returns the offending field name with the error message.
    pub fn check(&self) -> core::result::Result<(), (&'static str, alloc::string::String)> {
        use alloc::string::ToString;
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(("lr0", "must be positive".to_string()));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr0) {
            return Err(("lr_min", "must satisfy 0 < lr_min <= lr0".to_string()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(("weight_decay", "must be nonnegative".to_string()));
        }
        if self.batch_size < 2 {
            return Err(("batch_size", "must be at least 2".to_string()));
        }
        if self.max_epochs == 0 {
            return Err(("max_epochs", "must be positive".to_string()));
        }
        if self.patience == 0 {
            return Err(("patience", "must be at least 1".to_string()));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(("beta1", "must be in [0, 1)".to_string()));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(("beta2", "must be in [0, 1)".to_string()));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(("adam_eps", "must be positive".to_string()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|(field, msg)| invalid_arg!("hyperparameters.{field} {msg}"))
    }
}

/// `lr_min + ½(lr0 − lr_min)(1 + cos(π·epoch/max_epochs))`.
pub fn cosine_lr(epoch: usize, max_epochs: usize, lr0: f64, lr_min: f64) -> f64 {
    if max_epochs == 0 {
        return lr0;
    }
    let t = epoch.min(max_epochs) as f64 / max_epochs as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + libm::cos(core::f64::consts::PI * t))
}

/// Per-tensor first and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamWState {
    pub fn new(shapes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = shapes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self { m, v, t: 0 }
    }

    pub fn for_params(params: &[&[f64]]) -> Self {
        Self::new(params.iter().map(|p| p.len()))
    }
}

/// One decoupled AdamW update:
/// `θ ← θ − lr·(m̂/(√v̂ + eps) + weight_decay·θ)`.
///
/// Gradients are checked for finiteness before anything is modified.
pub fn adamw_step(
    params: &mut [&mut [f64]],
    grads: &[Vec<f64>],
    state: &mut AdamWState,
    lr: f64,
    hp: &Hyperparameters,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(shape_err!(
            "{} parameter tensors, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    if lr.is_nan() || lr <= 0.0 {
        return Err(invalid_arg!("learning rate must be positive"));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(shape_err!("tensor {i}: {} params, {} grads", p.len(), g.len()));
        }
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(alloc::format!(
                "gradient of tensor {i} at index {pos}"
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - libm::pow(hp.beta1, f64::from(t));
    let bias2 = 1.0 - libm::pow(hp.beta2, f64::from(t));
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
            *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * (m_hat / (libm::sqrt(v_hat) + hp.adam_eps) + hp.weight_decay * *p);
        }
    }
    Ok(())
}
