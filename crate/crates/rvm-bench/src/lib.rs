//! Shared setup for the criterion benchmarks: a small fixed model and
//! deterministic clips at several unroll lengths.

use rvm_core::model::{ModelConfig, ModelWeights};
use rvm_core::tensor::Tensor;
use rvm_core::video::{generate, SynthKind, SynthSpec, VideoClip};

pub fn bench_model() -> ModelConfig {
    ModelConfig {
        frame: 32,
        patch: 8,
        dim: 16,
        enc_layers: 1,
        enc_heads: 2,
        core_layers: 1,
        core_heads: 2,
        dec_dim: 16,
        dec_heads: 2,
        dec_blocks: 1,
        ..ModelConfig::default()
    }
}

pub fn bench_weights(cfg: &ModelConfig) -> ModelWeights<Tensor<f32>> {
    ModelWeights::init(cfg, 0xBE)
}

pub fn bench_clip(cfg: &ModelConfig, t: usize) -> VideoClip {
    let spec = SynthSpec {
        kind: SynthKind::NoiseSquare,
        t,
        h: cfg.frame,
        w: cfg.frame,
        square_size: 8,
        velocity: (0, cfg.patch as i64),
        seed: 0xC11F,
        truth_patch: cfg.patch,
    };
    generate(&spec).unwrap().0
}
