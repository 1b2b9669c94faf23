//! Feature extraction for evaluation: recurrent unroll, per-frame encoder
//! features, and the full-self-attention aggregation baseline.

use crate::encoder::{encode_frame, EncoderLayer, EncoderWeights};
use crate::model::{ModelConfig, ModelWeights};
use crate::recurrent::step;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tokenizer::{patchify_embed, TokenRole};
use crate::video::VideoClip;

/// Per-frame, per-patch feature stack `[T, N, D]` (CLS dropped).
#[derive(Clone, Debug)]
pub struct FeatureVolume {
    pub t: usize,
    pub n: usize,
    pub d: usize,
    pub h_patches: usize,
    pub w_patches: usize,
    pub data: Vec<f32>,
}

impl FeatureVolume {
    pub fn feature(&self, t: usize, patch: usize) -> &[f32] {
        let base = (t * self.n + patch) * self.d;
        &self.data[base..base + self.d]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.n * self.d..(t + 1) * self.n * self.d]
    }

    /// Truncate to the first `t` frames.
    pub fn truncated(&self, t: usize) -> FeatureVolume {
        assert!(t <= self.t);
        FeatureVolume {
            t,
            n: self.n,
            d: self.d,
            h_patches: self.h_patches,
            w_patches: self.w_patches,
            data: self.data[..t * self.n * self.d].to_vec(),
        }
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AggregatorKind {
    Recurrent,
    FullSelfAttention,
}

impl AggregatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Recurrent => "recurrent",
            AggregatorKind::FullSelfAttention => "full_self_attention",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "recurrent" => Some(AggregatorKind::Recurrent),
            "full_self_attention" => Some(AggregatorKind::FullSelfAttention),
            _ => None,
        }
    }
}

fn stage_frozen<E: Scalar>(tape: &mut Tape<E>, w: &ModelWeights<Tensor<E>>) -> ModelWeights<Var> {
    w.map(&mut |t| tape.constant(t))
}

/// Unroll the recurrent core over every frame of the clip. Inference runs
/// one small tape per frame, carrying the state as a plain tensor, so
/// memory stays constant in T and cost is strictly linear.
pub fn recurrent_features(
    clip: &VideoClip,
    weights: &ModelWeights<Tensor<f32>>,
    cfg: &ModelConfig,
) -> FeatureVolume {
    let tok_cfg = cfg.tokenizer();
    let enc_cfg = cfg.encoder();
    let core_cfg = cfg.core();
    let n = cfg.num_patches();
    let mut state = Tensor::<f32>::zeros(&[n + 1, cfg.dim]);
    let mut data = Vec::with_capacity(clip.t * n * cfg.dim);
    for ti in 0..clip.t {
        let mut tape = Tape::<f32>::new();
        let staged = stage_frozen(&mut tape, weights);
        let frame = clip.frame(ti);
        let ts = patchify_embed(&mut tape, &frame, &tok_cfg, &staged.tokenizer, TokenRole::Source);
        let encoded = encode_frame(&mut tape, ts.tokens, &staged.encoder, &enc_cfg);
        let prev = tape.constant(&state);
        let next = step(&mut tape, encoded, prev, &staged.core, &core_cfg);
        state = tape.tensor_of(next);
        // Patch tokens only (row 0 is CLS).
        data.extend_from_slice(&state.data()[cfg.dim..]);
    }
    FeatureVolume {
        t: clip.t,
        n,
        d: cfg.dim,
        h_patches: cfg.frame / cfg.patch,
        w_patches: cfg.frame / cfg.patch,
        data,
    }
}

/// Per-frame encoder features with no temporal mixing at all — the
/// image-model control.
pub fn frame_features(
    clip: &VideoClip,
    weights: &ModelWeights<Tensor<f32>>,
    cfg: &ModelConfig,
) -> FeatureVolume {
    let tok_cfg = cfg.tokenizer();
    let enc_cfg = cfg.encoder();
    let n = cfg.num_patches();
    let mut data = Vec::with_capacity(clip.t * n * cfg.dim);
    for ti in 0..clip.t {
        let mut tape = Tape::<f32>::new();
        let staged = stage_frozen(&mut tape, weights);
        let frame = clip.frame(ti);
        let ts = patchify_embed(&mut tape, &frame, &tok_cfg, &staged.tokenizer, TokenRole::Source);
        let encoded = encode_frame(&mut tape, ts.tokens, &staged.encoder, &enc_cfg);
        let row0 = cfg.dim; // skip CLS
        data.extend_from_slice(&tape.data_of(encoded)[row0..]);
    }
    FeatureVolume {
        t: clip.t,
        n,
        d: cfg.dim,
        h_patches: cfg.frame / cfg.patch,
        w_patches: cfg.frame / cfg.patch,
        data,
    }
}

/// The self-attention aggregation stack for the architecture ablation:
/// the same frame encoder, then `core_layers` plain transformer layers over
/// all frames' tokens concatenated along the token axis, with positions
/// augmented by a time encoding.
#[derive(Clone, Debug)]
pub struct SelfAttentionAggregator {
    pub layers: Vec<EncoderLayer<Tensor<f32>>>,
    pub final_norm: crate::blocks::LayerNormParams<Tensor<f32>>,
}

impl SelfAttentionAggregator {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = Rng::stream(seed, &[0x5A]);
        let enc_cfg = cfg.encoder();
        let layer_cfg = crate::encoder::EncoderConfig {
            layers: cfg.core_layers,
            ..enc_cfg
        };
        let weights = EncoderWeights::<Tensor<f32>>::init(&layer_cfg, &mut rng);
        SelfAttentionAggregator {
            layers: weights.layers,
            final_norm: crate::blocks::LayerNormParams::init(cfg.dim),
        }
    }
}

/// Sin/cos features of a single normalized coordinate (used for the time
/// axis of the self-attention baseline).
pub fn fourier_time(steps: usize, dim: usize) -> Tensor<f32> {
    assert!(dim % 2 == 0, "time encoding dim {dim} must be even");
    let nf = dim / 2;
    let max_f = (steps as f64 / 2.0).max(1.0);
    let tau = 2.0 * std::f64::consts::PI;
    let mut out = Vec::with_capacity(steps * dim);
    for t in 0..steps {
        let tn = t as f64 / steps as f64;
        for j in 0..nf {
            let f = if nf == 1 {
                1.0
            } else {
                (max_f.ln() * j as f64 / (nf - 1) as f64).exp()
            };
            out.push((tau * f * tn).sin() as f32);
        }
        for j in 0..nf {
            let f = if nf == 1 {
                1.0
            } else {
                (max_f.ln() * j as f64 / (nf - 1) as f64).exp()
            };
            out.push((tau * f * tn).cos() as f32);
        }
    }
    Tensor::from_vec(&[steps, dim], out)
}

/// Joint encoding of all frames: tokens from every frame are concatenated
/// (1×P×P tokenization) and self-attention runs across the whole sequence.
pub fn self_attention_features(
    clip: &VideoClip,
    weights: &ModelWeights<Tensor<f32>>,
    aggregator: &SelfAttentionAggregator,
    cfg: &ModelConfig,
) -> FeatureVolume {
    let tok_cfg = cfg.tokenizer();
    let enc_cfg = cfg.encoder();
    let n = cfg.num_patches();
    let n1 = n + 1;
    let mut tape = Tape::<f32>::new();
    let staged = stage_frozen(&mut tape, weights);
    let time_code = fourier_time(clip.t, cfg.dim);

    let mut per_frame = Vec::with_capacity(clip.t);
    for ti in 0..clip.t {
        let frame = clip.frame(ti);
        let ts = patchify_embed(&mut tape, &frame, &tok_cfg, &staged.tokenizer, TokenRole::Source);
        let encoded = encode_frame(&mut tape, ts.tokens, &staged.encoder, &enc_cfg);
        // Add this frame's time code to every token.
        let code = Tensor::from_vec(
            &[cfg.dim],
            time_code.data()[ti * cfg.dim..(ti + 1) * cfg.dim].to_vec(),
        );
        let code_v = tape.constant(&code);
        per_frame.push(tape.add_row(encoded, code_v));
    }
    let mut x = tape.concat_rows(&per_frame);
    let agg_layers: Vec<EncoderLayer<Var>> = aggregator
        .layers
        .iter()
        .map(|l| l.map(&mut |t| tape.constant(t)))
        .collect();
    for layer in &agg_layers {
        let normed = crate::blocks::layernorm(&mut tape, x, &layer.attn_norm);
        let a = crate::blocks::multihead_self_attention(&mut tape, normed, &layer.attn, cfg.core_heads);
        x = tape.add(x, a);
        let normed = crate::blocks::layernorm(&mut tape, x, &layer.mlp_norm);
        let m = crate::blocks::mlp(&mut tape, normed, &layer.mlp);
        x = tape.add(x, m);
    }
    let final_norm = aggregator.final_norm.map(&mut |t| tape.constant(t));
    x = crate::blocks::layernorm(&mut tape, x, &final_norm);

    // Split back per frame, dropping each frame's CLS row.
    let all = tape.data_of(x);
    let mut data = Vec::with_capacity(clip.t * n * cfg.dim);
    for ti in 0..clip.t {
        let start = (ti * n1 + 1) * cfg.dim;
        data.extend_from_slice(&all[start..start + n * cfg.dim]);
    }
    FeatureVolume {
        t: clip.t,
        n,
        d: cfg.dim,
        h_patches: cfg.frame / cfg.patch,
        w_patches: cfg.frame / cfg.patch,
        data,
    }
}

/// Dispatch on aggregator kind. The self-attention baseline needs its
/// aggregation stack passed in (it has no recurrent weights to reuse).
pub fn extract_features(
    clip: &VideoClip,
    weights: &ModelWeights<Tensor<f32>>,
    cfg: &ModelConfig,
    kind: AggregatorKind,
    aggregator: Option<&SelfAttentionAggregator>,
) -> FeatureVolume {
    match kind {
        AggregatorKind::Recurrent => recurrent_features(clip, weights, cfg),
        AggregatorKind::FullSelfAttention => {
            let agg = aggregator.expect("full_self_attention needs an aggregation stack");
            self_attention_features(clip, weights, agg, cfg)
        }
    }
}
