use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::params::ParamSet;

/// Linear warmup to `base_lr`, then constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
}

impl WarmupSchedule {
    /// Learning rate for 1-based `step`.
    pub fn lr(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.base_lr
        } else {
            step as f64 / self.warmup_steps as f64 * self.base_lr
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
        }
    }
}

/// AdamW with decoupled weight decay. Decay skips 1×n parameters (biases,
/// norm gains).
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub first: Vec<Array2<f64>>,
    pub second: Vec<Array2<f64>>,
    pub steps: u64,
}

impl AdamW {
    pub fn new(params: &ParamSet, config: AdamWConfig) -> Self {
        let zeros: Vec<Array2<f64>> = params.iter().map(|(_, v)| Array2::zeros(v.dim())).collect();
        AdamW {
            config,
            first: zeros.clone(),
            second: zeros,
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &mut Gradients, lr: f64) {
        if let Some(max) = self.config.clip_norm {
            let norm = grads.global_norm();
            if norm > max {
                grads.scale(max / norm);
            }
        }
        self.steps += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
        for (i, ((_, p), g)) in params.iter_mut().zip(grads.iter_mut()).enumerate() {
            let Some(g) = g else { continue };
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            if c.weight_decay > 0.0 && p.nrows() > 1 {
                p.mapv_inplace(|x| x * (1.0 - lr * c.weight_decay));
            }
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(&*g)
                .for_each(|p, m, v, &g| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= lr * mh / (vh.sqrt() + c.eps);
                });
        }
    }
}

impl AdamW {
    /// Appends the moment estimates to `ck` under `prefix`.
    pub fn export(&self, prefix: &str, ck: &mut crate::checkpoint::Checkpoint) {
        for (i, (m, v)) in self.first.iter().zip(&self.second).enumerate() {
            ck.push(format!("{prefix}.m.{i}"), m.clone());
            ck.push(format!("{prefix}.v.{i}"), v.clone());
        }
    }

    /// Restores moments written by [`AdamW::export`].
    pub fn import(
        params: &ParamSet,
        config: AdamWConfig,
        steps: u64,
        prefix: &str,
        ck: &crate::checkpoint::Checkpoint,
    ) -> crate::Result<Self> {
        let mut opt = AdamW::new(params, config);
        opt.steps = steps;
        for i in 0..opt.first.len() {
            let m = ck.tensor(&format!("{prefix}.m.{i}"))?;
            let v = ck.tensor(&format!("{prefix}.v.{i}"))?;
            if m.dim() != opt.first[i].dim() || v.dim() != opt.second[i].dim() {
                return Err(crate::Error::Checkpoint(format!("optimizer state {i} has the wrong shape")));
            }
            opt.first[i] = m.clone();
            opt.second[i] = v.clone();
        }
        Ok(opt)
    }
}
