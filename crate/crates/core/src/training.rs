//! Optimization loop shared by both stages.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::numerics::{clip_grad_norm, Graph, NodeId, Optimizer, OptimizerConfig, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    /// Learning rate at the last step, as a fraction of `lr` (cosine decay).
    pub final_lr_ratio: f64,
    /// Length of the cosine decay, if it should run past `steps`.
    pub decay_steps: Option<usize>,
    pub clip_norm: f64,
    /// Decoupled weight decay applied with the Adam update.
    pub weight_decay: f64,
    /// Stop early once this much wall time has passed.
    pub max_seconds: Option<f64>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            lr: 2e-3,
            warmup_steps: 50,
            final_lr_ratio: 0.05,
            decay_steps: None,
            clip_norm: 1.0,
            weight_decay: 0.0,
            max_seconds: None,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            bail!(Config, "steps and batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!(Config, "lr must be positive and finite");
        }
        if !(0.0..=1.0).contains(&self.final_lr_ratio) {
            bail!(Config, "final_lr_ratio must lie in [0, 1]");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            bail!(Config, "weight_decay must be non-negative and finite");
        }
        if self.clip_norm <= 0.0 {
            bail!(Config, "clip_norm must be positive");
        }
        Ok(())
    }

    /// Linear warm-up followed by cosine decay.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.decay_steps.unwrap_or(self.steps).saturating_sub(self.warmup_steps)).max(1) as f64;
        let frac = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        self.lr * (self.final_lr_ratio + (1.0 - self.final_lr_ratio) * cos)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub losses: Vec<f64>,
    pub seconds: f64,
    pub time_limited: bool,
}

impl TrainReport {
    /// Mean loss over the last `n` steps.
    pub fn tail_loss(&self, n: usize) -> f64 {
        let tail = &self.losses[self.losses.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Models whose parameters live in a single store.
pub trait Trainable {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
}

/// Adam with clipping. `loss_fn(model, graph, step)` builds the batch loss.
pub fn run_training<M: Trainable>(
    model: &mut M,
    cfg: &TrainConfig,
    mut loss_fn: impl FnMut(&M, &mut Graph, usize) -> Result<NodeId>,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut opt = Optimizer::new(OptimizerConfig {
        weight_decay: cfg.weight_decay,
        ..OptimizerConfig::adam(cfg.lr)
    });
    let mut report = TrainReport::default();
    for step in 0..cfg.steps {
        if let Some(limit) = cfg.max_seconds {
            if start.elapsed().as_secs_f64() > limit {
                report.time_limited = true;
                break;
            }
        }
        let (loss, mut grads) = {
            let mut g = Graph::new();
            let loss = loss_fn(model, &mut g, step)?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                bail!(Data, "non-finite loss at step {step}");
            }
            (value, g.backward(loss)?.for_store(model.store()))
        };
        clip_grad_norm(&mut grads, cfg.clip_norm);
        opt.set_lr(cfg.lr_at(step));
        opt.step(model.store_mut(), &grads)?;
        report.losses.push(loss);
        report.steps = step + 1;
        on_step(step, loss);
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!("step {step} loss {loss:.4} lr {:.2e}", cfg.lr_at(step));
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
