use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::ModelParameters;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one array per parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ModelParameters) -> Self {
        let zeros: Vec<ArrayD<f64>> = params
            .blocks()
            .iter()
            .map(|(_, b)| ArrayD::zeros(b.raw_dim()))
            .collect();
        AdamState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Bias-corrected Adam update of `params` with `grads`.
    pub fn update(&mut self, params: &mut ModelParameters, grads: &ModelParameters) -> Result<()> {
        let blocks = params.blocks_mut();
        if blocks.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} blocks, model has {}",
                self.m.len(),
                blocks.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, ((name, mut p), (_, g))) in blocks.into_iter().zip(grads.blocks()).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            if m.shape() != p.shape() || g.shape() != p.shape() {
                return Err(Error::Shape(format!("moment shape mismatch for {name}")));
            }
            ndarray::Zip::from(&mut p)
                .and(&g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut ModelParameters, max_norm: f64) -> f64 {
    let norm = grads.squared_norm().sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
