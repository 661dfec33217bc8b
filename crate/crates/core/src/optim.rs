//! Adam with decoupled weight decay and a cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Training hyper-parameters shared by every regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_base: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            lr_base: 1e-3,
            lr_min: 0.0,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainHyper {
    /// Fine-tuning values: lr 3e-5, weight decay 1e-4, 200 epochs, batch 16.
    pub fn paper_hparams() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            lr_base: 3e-5,
            lr_min: 0.0,
            weight_decay: 1e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr_min <= self.lr_base) || self.lr_min < 0.0 {
            return Err(Error::Config(format!(
                "need 0 <= lr_min <= lr_base, got {} / {}",
                self.lr_min, self.lr_base
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// `lr_min + ½(lr_base − lr_min)(1 + cos(π·step/total_steps))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_base: f64, lr_min: f64) -> f64 {
    let total = total_steps.max(1);
    if step >= total {
        return lr_min;
    }
    let t = step as f64 / total as f64;
    lr_min + 0.5 * (lr_base - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Self {
            config,
            first: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Decay is decoupled and applied first:
    /// `p ← p − lr·wd·p` on masked tensors, then `p ← p − lr·m̂/(√v̂ + eps)`.
    /// Parameters are left untouched if any gradient is non-finite.
    pub fn step(
        &mut self,
        params: Vec<&mut Tensor>,
        grads: &[Tensor],
        decay_mask: &[bool],
        lr: f64,
    ) -> Result<()> {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        assert_eq!(grads.len(), params.len());
        for (index, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { index });
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let decay = if decay_mask.get(k).copied().unwrap_or(false) {
                lr * weight_decay
            } else {
                0.0
            };
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (i, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gv;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gv * gv;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *pv -= decay * *pv;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
