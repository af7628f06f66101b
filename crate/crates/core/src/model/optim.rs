use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adaptive moment estimation with decoupled weight decay:
/// `θ ← θ − lr·(m̂ / (√v̂ + ε) + λ·θ)`.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    config: AdamWConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Config(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let one = T::one();
        let bias1 = one - T::of(c.beta1.powi(self.step as i32));
        let bias2 = one - T::of(c.beta2.powi(self.step as i32));
        let (lr, eps, wd) = (T::of(lr), T::of(c.eps), T::of(c.weight_decay));
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adamw",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (idx, (theta, &grad)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[idx] = b1 * m[idx] + (one - b1) * grad;
                v[idx] = b2 * v[idx] + (one - b2) * grad * grad;
                let m_hat = m[idx] / bias1;
                let v_hat = v[idx] / bias2;
                *theta = *theta - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *theta);
            }
        }
        Ok(())
    }
}

/// Linear ramp from 0 to `peak` over the warmup steps, then linear decay to
/// 0 at `total` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearWarmup {
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LinearWarmup {
    pub fn new(peak: f64, total: usize, warmup_fraction: f64) -> Self {
        let warmup = (warmup_fraction * total as f64).round() as usize;
        LinearWarmup { peak, warmup, total }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup {
            self.peak * step as f64 / self.warmup as f64
        } else if step >= self.total {
            0.0
        } else {
            self.peak * (self.total - step) as f64 / (self.total - self.warmup) as f64
        }
    }
}
