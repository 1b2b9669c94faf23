//! Analytic FLOP accounting from configuration shapes.
//!
//! Conventions (fixed so counts are exact integers, comparable across
//! aggregators): a multiply-add is 2 FLOPs; bias adds and residual adds are
//! 1 per element; softmax is 4 per logit (max-subtract, exp, sum, divide);
//! layernorm is 8 per element; gelu is 8 per element; sigmoid is 4 per
//! element. The structural claims under test do not depend on these
//! constants — only on which terms scale with what.

use crate::model::ModelConfig;

fn linear(s: u64, din: u64, dout: u64) -> u64 {
    2 * s * din * dout + s * dout
}

fn layernorm(s: u64, d: u64) -> u64 {
    8 * s * d
}

fn gelu(n: u64) -> u64 {
    8 * n
}

fn sigmoid(n: u64) -> u64 {
    4 * n
}

fn softmax(n_logits: u64) -> u64 {
    4 * n_logits
}

/// Full multi-head attention: projections, scores, softmax, weighted sum,
/// output projection.
fn attention(sq: u64, skv: u64, d: u64) -> u64 {
    let proj = linear(sq, d, d) + 2 * linear(skv, d, d) + linear(sq, d, d);
    proj + attention_mixing(sq, skv, d)
}

/// The sequence-mixing part of attention only: scores, softmax, weighted
/// sum. This is the term that is quadratic in sequence length.
fn attention_mixing(sq: u64, skv: u64, d: u64) -> u64 {
    2 * sq * skv * d + softmax(sq * skv) + 2 * sq * skv * d
}

fn mlp(s: u64, d: u64, mlp_ratio: f64) -> u64 {
    let hidden = (d as f64 * mlp_ratio).round() as u64;
    linear(s, d, hidden) + gelu(s * hidden) + linear(s, hidden, d)
}

fn residual(s: u64, d: u64) -> u64 {
    s * d
}

/// Cost model for one configuration.
#[derive(Clone, Debug)]
pub struct CostModel {
    tokens: u64,
    dim: u64,
    patch_dim: u64,
    enc_layers: u64,
    enc_final_norm: bool,
    core_layers: u64,
    mlp_ratio: f64,
}

impl CostModel {
    pub fn new(cfg: &ModelConfig) -> Self {
        CostModel {
            tokens: cfg.num_patches() as u64 + 1,
            dim: cfg.dim as u64,
            patch_dim: (cfg.patch * cfg.patch * 3) as u64,
            enc_layers: cfg.enc_layers as u64,
            enc_final_norm: cfg.enc_final_norm,
            core_layers: cfg.core_layers as u64,
            mlp_ratio: cfg.mlp_ratio,
        }
    }

    /// Patchify + embed + positions for one frame (N patch tokens).
    pub fn tokenize_frame(&self) -> u64 {
        let n = self.tokens - 1;
        linear(n, self.patch_dim, self.dim) + n * self.dim
    }

    fn encoder_layer(&self, s: u64) -> u64 {
        layernorm(s, self.dim)
            + attention(s, s, self.dim)
            + residual(s, self.dim)
            + layernorm(s, self.dim)
            + mlp(s, self.dim, self.mlp_ratio)
            + residual(s, self.dim)
    }

    /// Shared ViT encoder over one frame's token set.
    pub fn encode_frame(&self) -> u64 {
        let s = self.tokens;
        let mut total = self.enc_layers * self.encoder_layer(s);
        if self.enc_final_norm {
            total += layernorm(s, self.dim);
        }
        total
    }

    /// One recurrent step: gates, transformer stack over the gated memory,
    /// convex blend. Independent of the step index by construction.
    pub fn core_step(&self) -> u64 {
        let s = self.tokens;
        let d = self.dim;
        // Two gates: two matmuls + add + bias + sigmoid each.
        let gate = 2 * (2 * s * d * d) + s * d + s * d + sigmoid(s * d);
        let gates = 2 * gate;
        let reset_apply = s * d;
        let block = layernorm(s, d)
            + attention(s, s, d)
            + residual(s, d)
            + layernorm(s, d)
            + mlp(s, d, self.mlp_ratio)
            + residual(s, d)
            + layernorm(s, d)
            + attention(s, s, d)
            + residual(s, d);
        let blend = 4 * s * d;
        gates + reset_apply + self.core_layers * block + blend
    }

    /// Recurrent feature extraction over T frames: strictly `b·T` with the
    /// per-frame cost constant in T (and zero affine offset).
    pub fn recurrent_forward(&self, t: u64) -> u64 {
        t * self.recurrent_per_frame()
    }

    pub fn recurrent_per_frame(&self) -> u64 {
        self.tokenize_frame() + self.encode_frame() + self.core_step()
    }

    /// Coefficients (a, b) of the exact recurrent cost a + b·T.
    pub fn recurrent_coefficients(&self) -> (u64, u64) {
        (0, self.recurrent_per_frame())
    }

    /// Full self-attention aggregator: per-frame tokenize+encode, then
    /// `core_layers` plain transformer layers over all T·(N+1) tokens
    /// jointly (time-augmented positions cost one add per token).
    pub fn self_attention_forward(&self, t: u64) -> u64 {
        let s = t * self.tokens;
        t * (self.tokenize_frame() + self.encode_frame())
            + s * self.dim // time encoding add
            + self.core_layers * self.encoder_layer(s)
    }

    /// The attention sequence-mixing term of the aggregator alone — the
    /// part that grows quadratically in T.
    pub fn self_attention_mixing_term(&self, t: u64) -> u64 {
        let s = t * self.tokens;
        self.core_layers * attention_mixing(s, s, self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> CostModel {
        CostModel::new(&ModelConfig::default())
    }

    #[test]
    fn recurrent_cost_is_exactly_linear() {
        let m = model();
        let (a, b) = m.recurrent_coefficients();
        for t in 1..=100 {
            assert_eq!(m.recurrent_forward(t), a + b * t);
        }
    }

    #[test]
    fn per_step_cost_does_not_depend_on_time_index() {
        let m = model();
        let per_frame: Vec<u64> = (1..=64)
            .map(|t| m.recurrent_forward(t) - m.recurrent_forward(t - 1))
            .collect();
        assert!(per_frame.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(per_frame[0], m.recurrent_per_frame());
    }

    #[test]
    fn attention_mixing_term_scales_quadratically() {
        let m = model();
        let r8 = m.self_attention_mixing_term(8);
        let r32 = m.self_attention_mixing_term(32);
        assert_eq!(r32, 16 * r8, "quadratic term must scale as (32/8)^2");
        let r16 = m.self_attention_mixing_term(16);
        assert_eq!(r16, 4 * r8);
    }

    #[test]
    fn self_attention_dominates_recurrent_at_long_horizons() {
        let m = model();
        assert!(m.self_attention_forward(64) > m.recurrent_forward(64));
        // And the gap widens with T.
        let gap8 = m.self_attention_forward(8) as f64 / m.recurrent_forward(8) as f64;
        let gap64 = m.self_attention_forward(64) as f64 / m.recurrent_forward(64) as f64;
        assert!(gap64 > gap8);
    }
}
