//! Shared frame encoder: a stack of pre-norm ViT blocks, no dropout.
//!
//! The same weights encode every frame, source and target alike; frames
//! never see each other here — all temporal mixing happens downstream in
//! the recurrent core.

use crate::blocks::{
    layernorm, mlp, multihead_self_attention, AttnWeights, LayerNormParams, MlpWeights,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub mlp_ratio: f64,
    /// Final layernorm after the last block.
    pub final_norm: bool,
}

impl EncoderConfig {
    pub fn new(layers: usize, heads: usize, dim: usize) -> Self {
        assert!(dim % heads == 0, "dim {dim} not divisible by heads {heads}");
        EncoderConfig {
            layers,
            heads,
            dim,
            mlp_ratio: 4.0,
            final_norm: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer<T> {
    pub attn_norm: LayerNormParams<T>,
    pub attn: AttnWeights<T>,
    pub mlp_norm: LayerNormParams<T>,
    pub mlp: MlpWeights<T>,
}

impl<E: Scalar> EncoderLayer<Tensor<E>> {
    fn init(cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        let hidden = (cfg.dim as f64 * cfg.mlp_ratio).round() as usize;
        EncoderLayer {
            attn_norm: LayerNormParams::init(cfg.dim),
            attn: AttnWeights::init(cfg.dim, rng),
            mlp_norm: LayerNormParams::init(cfg.dim),
            mlp: MlpWeights::init(cfg.dim, hidden, rng),
        }
    }
}

impl<T> EncoderLayer<T> {
    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        self.attn_norm.visit(&format!("{prefix}.attn_norm"), f);
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.mlp_norm.visit(&format!("{prefix}.mlp_norm"), f);
        self.mlp.visit(&format!("{prefix}.mlp"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        self.attn_norm.visit_mut(&format!("{prefix}.attn_norm"), f);
        self.attn.visit_mut(&format!("{prefix}.attn"), f);
        self.mlp_norm.visit_mut(&format!("{prefix}.mlp_norm"), f);
        self.mlp.visit_mut(&format!("{prefix}.mlp"), f);
    }

    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> EncoderLayer<U> {
        EncoderLayer {
            attn_norm: self.attn_norm.map(f),
            attn: self.attn.map(f),
            mlp_norm: self.mlp_norm.map(f),
            mlp: self.mlp.map(f),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderWeights<T> {
    pub layers: Vec<EncoderLayer<T>>,
    pub final_norm: Option<LayerNormParams<T>>,
}

impl<E: Scalar> EncoderWeights<Tensor<E>> {
    pub fn init(cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        EncoderWeights {
            layers: (0..cfg.layers).map(|_| EncoderLayer::init(cfg, rng)).collect(),
            final_norm: cfg.final_norm.then(|| LayerNormParams::init(cfg.dim)),
        }
    }
}

impl<T> EncoderWeights<T> {
    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("{prefix}.layer{i}"), f);
        }
        if let Some(n) = &self.final_norm {
            n.visit(&format!("{prefix}.final_norm"), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("{prefix}.layer{i}"), f);
        }
        if let Some(n) = &mut self.final_norm {
            n.visit_mut(&format!("{prefix}.final_norm"), f);
        }
    }

    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> EncoderWeights<U> {
        EncoderWeights {
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
            final_norm: self.final_norm.as_ref().map(|n| n.map(f)),
        }
    }
}

/// Encode one frame's token matrix `[(S), D]`. Output shape equals input
/// shape; per layer: `x += SelfAttn(LN(x)); x += MLP(LN(x))`.
pub fn encode_frame<E: Scalar>(
    tape: &mut Tape<E>,
    tokens: Var,
    weights: &EncoderWeights<Var>,
    cfg: &EncoderConfig,
) -> Var {
    assert_eq!(
        tape.shape_of(tokens)[1],
        cfg.dim,
        "token dim {:?} does not match encoder dim {}",
        tape.shape_of(tokens),
        cfg.dim
    );
    let mut x = tokens;
    for layer in &weights.layers {
        let n = layernorm(tape, x, &layer.attn_norm);
        let a = multihead_self_attention(tape, n, &layer.attn, cfg.heads);
        x = tape.add(x, a);
        let n = layernorm(tape, x, &layer.mlp_norm);
        let m = mlp(tape, n, &layer.mlp);
        x = tape.add(x, m);
    }
    if let Some(norm) = &weights.final_norm {
        x = layernorm(tape, x, norm);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn staged(
        tape: &mut Tape<f64>,
        cfg: &EncoderConfig,
        seed: u64,
    ) -> EncoderWeights<Var> {
        let mut rng = Rng::new(seed);
        let w = EncoderWeights::<Tensor<f64>>::init(cfg, &mut rng);
        w.map(&mut |t| tape.leaf(t))
    }

    #[test]
    fn zero_layer_config_is_identity() {
        let cfg = EncoderConfig {
            layers: 0,
            heads: 2,
            dim: 8,
            mlp_ratio: 4.0,
            final_norm: false,
        };
        let mut tape = Tape::<f64>::new();
        let w = staged(&mut tape, &cfg, 1);
        let mut rng = Rng::new(2);
        let x_t = Tensor::<f64>::uniform(&[5, 8], -1.0, 1.0, &mut rng);
        let x = tape.constant(&x_t);
        let y = encode_frame(&mut tape, x, &w, &cfg);
        assert_eq!(tape.data_of(y), x_t.data());
    }

    #[test]
    fn permuting_input_tokens_permutes_outputs() {
        let cfg = EncoderConfig::new(2, 2, 8);
        let mut tape = Tape::<f64>::new();
        let w = staged(&mut tape, &cfg, 3);
        let mut rng = Rng::new(4);
        let x_t = Tensor::<f64>::uniform(&[6, 8], -1.0, 1.0, &mut rng);
        let x = tape.constant(&x_t);
        let y = encode_frame(&mut tape, x, &w, &cfg);
        // Swap tokens 1 and 4 at the input.
        let perm = [0usize, 4, 2, 3, 1, 5];
        let xp = tape.gather_rows(x, &perm);
        let yp = encode_frame(&mut tape, xp, &w, &cfg);
        let y_d = tape.data_of(y);
        let yp_d = tape.data_of(yp);
        for (out_row, &src_row) in perm.iter().enumerate() {
            let a = &yp_d[out_row * 8..(out_row + 1) * 8];
            let b = &y_d[src_row * 8..(src_row + 1) * 8];
            for (x1, x2) in a.iter().zip(b) {
                assert!((x1 - x2).abs() < 1e-9, "row {out_row}: {x1} vs {x2}");
            }
        }
    }

    #[test]
    fn encoding_is_deterministic_and_frame_independent() {
        let cfg = EncoderConfig::new(2, 2, 8);
        let mut rng = Rng::new(5);
        let a_t = Tensor::<f64>::uniform(&[4, 8], -1.0, 1.0, &mut rng);
        let b_t = Tensor::<f64>::uniform(&[4, 8], -1.0, 1.0, &mut rng);

        // Encode A alone.
        let mut tape1 = Tape::<f64>::new();
        let w1 = staged(&mut tape1, &cfg, 6);
        let a1 = tape1.constant(&a_t);
        let out_alone = encode_frame(&mut tape1, a1, &w1, &cfg);
        let alone = tape1.data_of(out_alone).to_vec();

        // Encode A alongside B on one tape, same weights.
        let mut tape2 = Tape::<f64>::new();
        let w2 = staged(&mut tape2, &cfg, 6);
        let a2 = tape2.constant(&a_t);
        let b2 = tape2.constant(&b_t);
        let out_a = encode_frame(&mut tape2, a2, &w2, &cfg);
        let _out_b = encode_frame(&mut tape2, b2, &w2, &cfg);
        assert_eq!(tape2.data_of(out_a), &alone[..], "cross-frame leakage");
    }
}
