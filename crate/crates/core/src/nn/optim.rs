//! AdamW with decoupled weight decay and a warmup + cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment buffers, one pair per parameter in store order.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl OptimState {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One AdamW update.
///
/// ```text
/// θ ← θ − lr·λ·θ
/// m ← β₁m + (1−β₁)g,  v ← β₂v + (1−β₂)g²
/// θ ← θ − lr · (m / (1−β₁ᵗ)) / (√(v / (1−β₂ᵗ)) + ε)
/// ```
///
/// Frozen parameters are skipped entirely, as are parameters without a gradient
/// (their moments are left as they were).
pub fn adamw_step(store: &mut ParamStore, grads: &Grads, state: &mut OptimState, lr: f64) -> Result<()> {
    ensure!(
        lr >= 0.0 && lr.is_finite(),
        "learning rate must be finite and ≥ 0, got {lr}"
    );
    ensure!(
        state.m.len() == store.len(),
        "optimizer state tracks {} parameters, store has {}",
        state.m.len(),
        store.len()
    );
    for (id, g) in grads.iter() {
        let numel = store.value(id).numel();
        ensure!(
            g.len() == numel,
            "gradient for `{}` has {} values, parameter has {numel}",
            store.param(id).name,
            g.len()
        );
    }
    state.step += 1;
    let AdamWConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (id, g) in grads.iter() {
        if store.is_frozen(id) {
            continue;
        }
        let (m, v) = (&mut state.m[id.index()], &mut state.v[id.index()]);
        let theta = store.value_mut(id).data_mut();
        for i in 0..g.len() {
            theta[i] -= lr * weight_decay * theta[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            theta[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Linear warmup from 0 over `floor(warmup_ratio · total_steps)` steps, then
/// cosine decay to 0 at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_steps: usize,
    pub warmup_ratio: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_steps: usize, warmup_ratio: f64) -> Result<Self> {
        ensure!(base_lr >= 0.0, "base_lr must be ≥ 0");
        ensure!(
            (0.0..1.0).contains(&warmup_ratio),
            "warmup_ratio must lie in [0, 1), got {warmup_ratio}"
        );
        Ok(Self {
            base_lr,
            total_steps,
            warmup_ratio,
        })
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.total_steps as f64 + 1e-9).floor() as usize
    }

    pub fn lr_at(&self, step: usize) -> Result<f64> {
        ensure!(
            step <= self.total_steps,
            "step {step} outside schedule of {} steps",
            self.total_steps
        );
        let warm = self.warmup_steps();
        if step < warm {
            return Ok(self.base_lr * step as f64 / warm as f64);
        }
        let span = self.total_steps - warm;
        if span == 0 {
            return Ok(0.0);
        }
        let progress = (step - warm) as f64 / span as f64;
        Ok(self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}
