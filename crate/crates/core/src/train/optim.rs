//! Adam with coupled L2 weight decay and a step-decay learning rate.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{LmfnError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const BASE_LR: f64 = 1e-4;
pub const LR_DECAY_EVERY: u64 = 500_000;

/// Learning rate at `iteration`: the base rate divided by ten for every
/// completed block of [`LR_DECAY_EVERY`] iterations.
pub fn lr_schedule(iteration: u64) -> f64 {
    scheduled_lr(BASE_LR, LR_DECAY_EVERY, iteration)
}

pub fn scheduled_lr(base: f64, decay_every: u64, iteration: u64) -> f64 {
    let drops = (iteration / decay_every.max(1)).min(i32::MAX as u64) as i32;
    base * 10f64.powi(-drops)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First and second moment buffers for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: IndexMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    /// Restores an optimizer from saved state.
    pub fn from_state(config: AdamConfig, step: u64, moments: IndexMap<String, Moments>) -> Self {
        Adam {
            config,
            step,
            moments,
        }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &IndexMap<String, Moments> {
        &self.moments
    }

    /// Applies one update to every trainable parameter using its
    /// accumulated gradient. Fails, leaving all parameters untouched, if
    /// any trainable parameter has no gradient.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        for (name, t) in params.iter() {
            if t.requires_grad() && t.grad().is_none() {
                return Err(LmfnError::Optimizer(format!(
                    "parameter {name:?} has no gradient; run backward before stepping"
                )));
            }
            if let Some(mo) = self.moments.get(name) {
                if mo.m.len() != t.numel() {
                    return Err(LmfnError::Optimizer(format!(
                        "moment buffers for {name:?} hold {} values, parameter has {}",
                        mo.m.len(),
                        t.numel()
                    )));
                }
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, p) in params.iter_mut() {
            if !p.requires_grad() {
                continue;
            }
            let n = p.numel();
            let mo = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| Moments {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                });
            let grad = p.grad().expect("checked above").to_vec();
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                let g = grad[i] as f64 + weight_decay * *x as f64;
                let m = beta1 * mo.m[i] as f64 + (1.0 - beta1) * g;
                let v = beta2 * mo.v[i] as f64 + (1.0 - beta2) * g * g;
                mo.m[i] = m as f32;
                mo.v[i] = v as f32;
                *x -= (lr * (m / c1) / ((v / c2).sqrt() + eps)) as f32;
            }
        }
        Ok(())
    }
}

/// Moment buffers as tensors shaped like their parameters.
pub fn moments_as_tensors(
    adam: &Adam,
    params: &ParamStore,
) -> Result<Vec<(String, Tensor, Tensor)>> {
    adam.moments
        .iter()
        .map(|(name, mo)| {
            let p = params.get(name).ok_or_else(|| {
                LmfnError::Optimizer(format!("moments for unknown parameter {name:?}"))
            })?;
            Ok((
                name.clone(),
                Tensor::from_vec(p.shape(), mo.m.clone())?,
                Tensor::from_vec(p.shape(), mo.v.clone())?,
            ))
        })
        .collect()
}
