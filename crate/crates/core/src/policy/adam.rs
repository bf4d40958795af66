use serde::{Deserialize, Serialize};

use super::{Weights, LOG_STD_MAX, LOG_STD_MIN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias correction. Minimizes: callers pass
/// the gradient of the loss.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Weights,
    v: Weights,
    step: u64,
}

impl Adam {
    pub fn new(shape: &Weights, config: AdamConfig) -> Self {
        let mut m = shape.clone();
        m.scale(0.0);
        Self {
            config,
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut Weights, grads: &Weights, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::non_finite("gradient"));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let blocks = params
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks())
            .zip(self.m.blocks_mut())
            .zip(self.v.blocks_mut());
        for ((((name, p), (_, g)), (_, m)), (_, v)) in blocks {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            if name == "log_std" {
                p.iter_mut()
                    .for_each(|x| *x = x.clamp(LOG_STD_MIN, LOG_STD_MAX));
            }
        }
        if !params.is_finite() {
            return Err(Error::non_finite("parameters after optimizer step"));
        }
        Ok(())
    }
}
