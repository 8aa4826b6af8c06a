use serde::{Deserialize, Serialize};

use super::params::{Layout, TensorKind};
use super::{OptimizerConfig, Scalar};

/// Linear warmup to `lr`, then linear decay to zero at `total_steps`.
pub fn lr_at(cfg: &OptimizerConfig, step: u64, total_steps: u64) -> f64 {
    let step = step as f64;
    let warm = cfg.warmup_steps as f64;
    let total = total_steps as f64;
    let up = if cfg.warmup_steps == 0 { 1.0 } else { step / warm };
    let down = if total_steps <= cfg.warmup_steps { if step < total { 1.0 } else { 0.0 } } else { ((total - step) / (total - warm)).max(0.0) };
    cfg.lr * up.min(down)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![T::zero(); n], v: vec![T::zero(); n] }
    }

    /// One AdamW update at 1-based `step` with learning rate `lr`.
    /// Weight decay is decoupled and only touches weight matrices.
    pub fn step(&mut self, cfg: &OptimizerConfig, layout: &Layout, params: &mut [T], grads: &[T], step: u64, lr: f64) {
        assert!(step >= 1, "optimizer steps are 1-based");
        let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
        let bc1 = T::c(1.0 - cfg.beta1.powf(step as f64));
        let bc2 = T::c(1.0 - cfg.beta2.powf(step as f64));
        let (lr_t, eps, decay) = (T::c(lr), T::c(cfg.eps), T::c(lr * cfg.weight_decay));
        for t in &layout.tensors {
            let decays = cfg.weight_decay != 0.0 && t.kind == TensorKind::Weight;
            for i in t.range() {
                let g = grads[i];
                let m = b1 * self.m[i] + (T::one() - b1) * g;
                let v = b2 * self.v[i] + (T::one() - b2) * g * g;
                self.m[i] = m;
                self.v[i] = v;
                let mhat = m / bc1;
                let vhat = v / bc2;
                if decays {
                    params[i] -= decay * params[i];
                }
                params[i] -= lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
