use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay (AdamW); SGD ignores it.
    #[serde(default)]
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            weight_decay: 0.0,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay: 0.0,
        }
    }
}

/// Stateful optimizer; Adam keeps first/second moments per parameter.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. `grads[i]` pairs with parameter `i` of `params`;
    /// `None` leaves that parameter (and its moments) untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() {
            bail!(Dimension, "{} gradients for {} parameters", grads.len(), params.len());
        }
        for (id, g) in params.ids().zip(grads) {
            if let Some(g) = g {
                if g.shape() != params.get(id).shape() {
                    bail!(
                        Dimension,
                        "gradient {:?} for parameter {} of shape {:?}",
                        g.shape(),
                        params.name(id),
                        params.get(id).shape()
                    );
                }
            }
        }
        self.steps += 1;
        let cfg = self.config;
        match cfg.kind {
            OptimizerKind::Sgd => {
                for (id, g) in params.ids().zip(grads).collect::<Vec<_>>() {
                    let Some(g) = g else { continue };
                    let p = params.get_mut(id);
                    p.data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(w, d)| *w -= cfg.lr * d);
                }
            }
            OptimizerKind::Adam => {
                if self.first.len() != params.len() {
                    self.first = params.ids().map(|id| vec![0.0; params.get(id).len()]).collect();
                    self.second = self.first.clone();
                }
                let t = self.steps as f64;
                let bias1 = 1.0 - cfg.beta1.powf(t);
                let bias2 = 1.0 - cfg.beta2.powf(t);
                for (id, g) in params.ids().zip(grads).collect::<Vec<_>>() {
                    let Some(g) = g else { continue };
                    let (m, v) = (&mut self.first[id.index()], &mut self.second[id.index()]);
                    let p = params.get_mut(id);
                    for (((w, d), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * d;
                        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * d * d;
                        let mh = *mi / bias1;
                        let vh = *vi / bias2;
                        *w -= cfg.lr * mh / (vh.sqrt() + cfg.eps) + cfg.lr * cfg.weight_decay * *w;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
