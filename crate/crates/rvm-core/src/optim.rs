//! AdamW with linear warmup and cosine decay.
//!
//! Decoupled weight decay is applied only to matrices (ndim ≥ 2); biases,
//! layernorm parameters, and single-token embeddings are exempt. The update
//! for each parameter is
//!
//! ```text
//! m ← β₁·m + (1−β₁)·g          m̂ = m / (1−β₁ᵗ)
//! v ← β₂·v + (1−β₂)·g²         v̂ = v / (1−β₂ᵗ)
//! w ← w − lr·(m̂ / (√v̂ + ε) + λ·w)
//! ```
//!
//! All moment buffers live in f32 alongside the weights and are keyed by
//! the weight registry's visit order, so updates are deterministic.

use crate::model::ModelWeights;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr_peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr_peak: 1.5e-4 * 32.0 / 256.0,
            warmup_steps: 100,
            total_steps: 2000,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

/// Learning rate at a 1-based step: linear warmup to `lr_peak`, then cosine
/// decay to zero at `total_steps`.
pub fn learning_rate(cfg: &OptimConfig, step: usize) -> f64 {
    if cfg.warmup_steps > 0 && step <= cfg.warmup_steps {
        return cfg.lr_peak * step as f64 / cfg.warmup_steps as f64;
    }
    if step >= cfg.total_steps {
        return 0.0;
    }
    let span = (cfg.total_steps - cfg.warmup_steps) as f64;
    let progress = (step - cfg.warmup_steps) as f64 / span;
    cfg.lr_peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// One parameter's moment buffers.
#[derive(Clone, Debug)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// The per-buffer AdamW update. `t` is the 1-based step count, `decay` the
/// weight-decay coefficient already resolved for this parameter.
pub fn adamw_update(
    data: &mut [f32],
    grad: &[f32],
    mom: &mut Moments,
    t: u64,
    lr: f64,
    cfg: &OptimConfig,
    decay: f32,
    clip_scale: f32,
) {
    let b1 = cfg.beta1 as f32;
    let b2 = cfg.beta2 as f32;
    let bc1 = (1.0 - cfg.beta1.powi(t as i32)) as f32;
    let bc2 = (1.0 - cfg.beta2.powi(t as i32)) as f32;
    let eps = cfg.eps as f32;
    let lr_f = lr as f32;
    for i in 0..data.len() {
        let g = grad[i] * clip_scale;
        mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * g;
        mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * g * g;
        let m_hat = mom.m[i] / bc1;
        let v_hat = mom.v[i] / bc2;
        data[i] -= lr_f * (m_hat / (v_hat.sqrt() + eps) + decay * data[i]);
    }
}

/// Optimizer state: first/second moments per parameter, in registry order.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: OptimConfig,
    pub moments: Vec<Moments>,
    /// Steps taken so far (bias correction uses step + 1 inside `step`).
    pub steps_done: u64,
}

impl AdamW {
    pub fn new(cfg: OptimConfig, weights: &ModelWeights<Tensor<f32>>) -> Self {
        let mut moments = Vec::new();
        weights.visit(&mut |_, t| {
            moments.push(Moments {
                m: vec![0.0; t.numel()],
                v: vec![0.0; t.numel()],
            });
        });
        AdamW {
            cfg,
            moments,
            steps_done: 0,
        }
    }

    /// Global L2 norm of all gradients (fixed order), for logging and clipping.
    pub fn grad_norm(weights: &ModelWeights<Tensor<f32>>) -> f64 {
        let mut sq = 0.0f64;
        weights.visit(&mut |name, t| {
            let g = t
                .grad
                .as_ref()
                .unwrap_or_else(|| panic!("missing gradient for {name}"));
            for &v in g {
                sq += (v as f64) * (v as f64);
            }
        });
        sq.sqrt()
    }

    /// Apply one update from the gradients accumulated on `weights`.
    /// Returns (lr used, pre-clip gradient norm).
    pub fn step(&mut self, weights: &mut ModelWeights<Tensor<f32>>) -> (f64, f64) {
        let norm = Self::grad_norm(weights);
        let clip_scale = if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };
        self.steps_done += 1;
        let t = self.steps_done;
        let lr = learning_rate(&self.cfg, t as usize);
        let wd = self.cfg.weight_decay as f32;
        let cs = clip_scale as f32;

        let mut idx = 0;
        let moments = &mut self.moments;
        let cfg = &self.cfg;
        weights.visit_mut(&mut |name, tensor| {
            let decay = if tensor.ndim() >= 2 { wd } else { 0.0 };
            let mom = &mut moments[idx];
            idx += 1;
            let grad = tensor
                .grad
                .take()
                .unwrap_or_else(|| panic!("missing gradient for {name}"));
            adamw_update(tensor.data_mut(), &grad, mom, t, lr, cfg, decay, cs);
        });
        (lr, norm)
    }
}
