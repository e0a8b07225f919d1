//! AdamW with decoupled weight decay and a cosine learning-rate schedule.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Display;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
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
            weight_decay: 1e-2,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<T> {
    first: Vec<T>,
    second: Vec<T>,
}

/// Optimizer state keyed by parameter name. Moments are created lazily the
/// first time a parameter is updated.
#[derive(Debug, Clone)]
pub struct AdamW<K, T> {
    pub config: AdamWConfig,
    step: u64,
    moments: BTreeMap<K, Moments<T>>,
}

impl<K: Ord + Clone + Display, T: Real> AdamW<K, T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Keys that currently hold optimizer state.
    pub fn tracked(&self) -> impl Iterator<Item = &K> {
        self.moments.keys()
    }

    /// One update at learning rate `lr` for every listed parameter. Fails
    /// without touching anything if a parameter has no gradient or the
    /// shapes disagree.
    pub fn step<'a>(
        &mut self,
        lr: f64,
        params: impl IntoIterator<Item = (K, &'a mut Tensor<T>)>,
        grads: &BTreeMap<K, Tensor<T>>,
    ) -> Result<()> {
        let params: Vec<(K, &'a mut Tensor<T>)> = params.into_iter().collect();
        for (key, p) in &params {
            let g = grads
                .get(key)
                .ok_or_else(|| TensorError::MissingGradient(key.to_string()))?;
            if g.shape() != p.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adamw",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let step_size = T::of(lr / bias1);
        let inv_sqrt_bias2 = T::of(1.0 / bias2.sqrt());
        let eps = T::of(c.eps);
        let decay = T::of(1.0 - lr * c.weight_decay);

        for (key, p) in params {
            let g = grads[&key].data();
            let n = p.numel();
            let m = self.moments.entry(key).or_insert_with(|| Moments {
                first: vec![T::zero(); n],
                second: vec![T::zero(); n],
            });
            let data = p.data_mut();
            for i in 0..n {
                m.first[i] = b1 * m.first[i] + one_b1 * g[i];
                m.second[i] = b2 * m.second[i] + one_b2 * g[i] * g[i];
                let denom = m.second[i].sqrt() * inv_sqrt_bias2 + eps;
                data[i] = data[i] * decay - step_size * m.first[i] / denom;
            }
        }
        Ok(())
    }
}

/// Cosine decay from `base_lr` at step 0 to zero at `total_steps`. Steps past
/// the end are clamped to the final value.
pub fn cosine_lr(base_lr: f64, step: u64, total_steps: u64) -> f64 {
    let total = total_steps.max(1);
    let progress = step.min(total) as f64 / total as f64;
    base_lr * 0.5 * (1.0 + (PI * progress).cos())
}
