//! Full model assembly: configuration, the named weight registry, and the
//! end-to-end forward pass from raw frames to the reconstruction loss.

use crate::blocks::BlockOrder;
use crate::decoder::{
    assemble_decoder_input, decode, reconstruction_loss, DecoderConfig, DecoderWeights,
};
use crate::encoder::{encode_frame, EncoderConfig, EncoderWeights};
use crate::error::Result;
use crate::recurrent::{unroll, CoreConfig, CoreWeights};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tokenizer::{
    mask_target, patchify_embed, patchify_raw, TokenRole, TokenizerConfig, TokenizerWeights,
};
use crate::video::SampleConfig;

/// All architecture hyperparameters in one place.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Frame height and width (square frames).
    pub frame: usize,
    /// Patch size in pixels.
    pub patch: usize,
    /// Encoder/core embedding dim.
    pub dim: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    pub mlp_ratio: f64,
    pub core_layers: usize,
    pub core_heads: usize,
    /// Target mask ratio.
    pub mask_ratio: f64,
    pub dec_dim: usize,
    pub dec_heads: usize,
    pub dec_blocks: usize,
    /// Source frames per sample.
    pub k_sources: usize,
    /// Target frames reconstructed per sample.
    pub n_targets: usize,
    /// Target gap range, in frames after the last source frame.
    pub gap_min: usize,
    pub gap_max: usize,
    /// Sub-block order in the recurrent core (listing order by default).
    pub core_order: BlockOrder,
    /// Sub-block order in the decoder (text order by default).
    pub dec_order: BlockOrder,
    pub gate_bias: bool,
    pub enc_final_norm: bool,
    pub dec_final_norm: bool,
}

impl Default for ModelConfig {
    /// Desk-scale defaults: 64×64 frames, 8-px patches (64 tokens),
    /// paper-default masking and sampling.
    fn default() -> Self {
        ModelConfig {
            frame: 64,
            patch: 8,
            dim: 32,
            enc_layers: 2,
            enc_heads: 4,
            mlp_ratio: 4.0,
            core_layers: 1,
            core_heads: 4,
            mask_ratio: 0.95,
            dec_dim: 32,
            dec_heads: 4,
            dec_blocks: 1,
            k_sources: 4,
            n_targets: 2,
            gap_min: 4,
            gap_max: 48,
            core_order: BlockOrder::SelfMlpCross,
            dec_order: BlockOrder::CrossMlpSelf,
            gate_bias: true,
            enc_final_norm: true,
            dec_final_norm: true,
        }
    }
}

impl ModelConfig {
    /// Micro model for exhaustive finite-difference checks: 8×8 frames,
    /// 4 tokens, everything minimal.
    pub fn micro() -> Self {
        ModelConfig {
            frame: 8,
            patch: 4,
            dim: 8,
            enc_layers: 1,
            enc_heads: 2,
            mlp_ratio: 2.0,
            core_layers: 1,
            core_heads: 2,
            mask_ratio: 0.5,
            dec_dim: 8,
            dec_heads: 2,
            dec_blocks: 1,
            k_sources: 2,
            n_targets: 1,
            gap_min: 2,
            gap_max: 4,
            ..ModelConfig::default()
        }
    }

    pub fn tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig::new(self.patch, self.dim, self.mask_ratio, self.frame, self.frame)
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.enc_layers,
            heads: self.enc_heads,
            dim: self.dim,
            mlp_ratio: self.mlp_ratio,
            final_norm: self.enc_final_norm,
        }
    }

    pub fn core(&self) -> CoreConfig {
        CoreConfig {
            layers: self.core_layers,
            heads: self.core_heads,
            dim: self.dim,
            mlp_ratio: self.mlp_ratio,
            gate_bias: self.gate_bias,
            order: self.core_order,
        }
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            dim: self.dec_dim,
            heads: self.dec_heads,
            blocks: self.dec_blocks,
            mlp_ratio: self.mlp_ratio,
            order: self.dec_order,
            final_norm: self.dec_final_norm,
        }
    }

    pub fn sampling(&self) -> SampleConfig {
        SampleConfig {
            k_sources: self.k_sources,
            n_targets: self.n_targets,
            gap_min: self.gap_min,
            gap_max: self.gap_max,
        }
    }

    /// N = tokens per frame (without CLS).
    pub fn num_patches(&self) -> usize {
        self.tokenizer().num_patches()
    }

    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if self.frame % self.patch != 0 {
            return Err(Error::Parse(format!(
                "patch {} must divide frame {}",
                self.patch, self.frame
            )));
        }
        if self.dim % self.enc_heads != 0 || self.dim % self.core_heads != 0 {
            return Err(Error::Parse(format!(
                "dim {} must be divisible by enc_heads {} and core_heads {}",
                self.dim, self.enc_heads, self.core_heads
            )));
        }
        if self.dec_dim % self.dec_heads != 0 {
            return Err(Error::Parse(format!(
                "dec_dim {} must be divisible by dec_heads {}",
                self.dec_dim, self.dec_heads
            )));
        }
        if self.dim % 4 != 0 || self.dec_dim % 4 != 0 {
            return Err(Error::Parse(
                "embedding dims must be divisible by 4 for Fourier positions".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::Parse(format!("mask ratio {} outside [0,1)", self.mask_ratio)));
        }
        if self.gap_min == 0 || self.gap_min > self.gap_max {
            return Err(Error::Parse(format!(
                "bad gap range [{}, {}]",
                self.gap_min, self.gap_max
            )));
        }
        Ok(())
    }
}

/// Every learnable tensor in the model. The same struct carries plain
/// storage (`T = Tensor<E>`) or taped handles (`T = Var`); one encoder
/// weight object serves both source and target frames by construction.
#[derive(Clone, Debug)]
pub struct ModelWeights<T> {
    pub tokenizer: TokenizerWeights<T>,
    pub encoder: EncoderWeights<T>,
    pub core: CoreWeights<T>,
    pub decoder: DecoderWeights<T>,
}

impl<E: Scalar> ModelWeights<Tensor<E>> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = Rng::stream(seed, &[0x11]);
        ModelWeights {
            tokenizer: TokenizerWeights::init(&cfg.tokenizer(), &mut rng),
            encoder: EncoderWeights::init(&cfg.encoder(), &mut rng),
            core: CoreWeights::init(&cfg.core(), &mut rng),
            decoder: DecoderWeights::init(&cfg.decoder(), cfg.dim, cfg.patch, &mut rng),
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// Stage every parameter onto a tape, preserving structure.
    pub fn stage(&self, tape: &mut Tape<E>) -> ModelWeights<Var> {
        self.map(&mut |t| tape.leaf(t))
    }

    /// Accumulate tape gradients back into this storage, matching the
    /// staged handles by visit order.
    pub fn accumulate_grads(&mut self, tape: &Tape<E>, staged: &ModelWeights<Var>) {
        let mut vars: Vec<Var> = Vec::new();
        staged.visit(&mut |_, v| vars.push(*v));
        let mut i = 0;
        self.visit_mut(&mut |_, t| {
            tape.grad_into(vars[i], t);
            i += 1;
        });
    }

    pub fn cast<F: Scalar>(&self) -> ModelWeights<Tensor<F>> {
        self.map(&mut |t| t.cast())
    }
}

impl<T> ModelWeights<T> {
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a T)) {
        self.tokenizer.visit("tok", f);
        self.encoder.visit("enc", f);
        self.core.visit("core", f);
        self.decoder.visit("dec", f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut T)) {
        self.tokenizer.visit_mut("tok", f);
        self.encoder.visit_mut("enc", f);
        self.core.visit_mut("core", f);
        self.decoder.visit_mut("dec", f);
    }

    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> ModelWeights<U> {
        ModelWeights {
            tokenizer: self.tokenizer.map(f),
            encoder: self.encoder.map(f),
            core: self.core.map(f),
            decoder: self.decoder.map(f),
        }
    }
}

/// Forward pass for one sample: encode the source frames, unroll the core,
/// then for each target mask/encode/decode and average the frame losses.
///
/// `mask_rng` drives target masking only, so the randomness is confined to
/// one reproducible stream per sample.
pub fn forward_loss<E: Scalar>(
    tape: &mut Tape<E>,
    weights: &ModelWeights<Var>,
    cfg: &ModelConfig,
    sources: &[Tensor<E>],
    targets: &[(Tensor<E>, usize)],
    mask_rng: &mut Rng,
) -> Result<Var> {
    assert!(!sources.is_empty() && !targets.is_empty(), "empty sample");
    let tok_cfg = cfg.tokenizer();
    let enc_cfg = cfg.encoder();
    let core_cfg = cfg.core();
    let dec_cfg = cfg.decoder();

    let mut encoded_sources = Vec::with_capacity(sources.len());
    for frame in sources {
        let ts = patchify_embed(tape, frame, &tok_cfg, &weights.tokenizer, TokenRole::Source);
        encoded_sources.push(encode_frame(tape, ts.tokens, &weights.encoder, &enc_cfg));
    }
    let outputs = unroll(tape, &encoded_sources, &weights.core, &core_cfg);

    let mut losses = Vec::with_capacity(targets.len());
    for (frame, _gap) in targets {
        let ts = patchify_embed(tape, frame, &tok_cfg, &weights.tokenizer, TokenRole::Target);
        let masked = mask_target(tape, &ts, cfg.mask_ratio, mask_rng);
        let encoded = encode_frame(tape, masked.tokens, &weights.encoder, &enc_cfg);
        let input =
            assemble_decoder_input(tape, &masked, encoded, &outputs, &weights.decoder, &dec_cfg)?;
        let recon = decode(tape, &input, &weights.decoder, &dec_cfg);
        let truth = patchify_raw(frame, cfg.patch);
        let truth_v = tape.constant(&truth);
        losses.push(reconstruction_loss(tape, recon, truth_v));
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l);
    }
    Ok(tape.scale(total, E::from_f64(1.0 / losses.len() as f64)))
}

/// Reconstruct one masked target frame from source frames: the full
/// forward pass, returning the decoded frame and its pixel MSE against the
/// target. Used for reconstruction dumps.
pub fn reconstruct_target(
    weights: &ModelWeights<Tensor<f32>>,
    cfg: &ModelConfig,
    sources: &[Tensor<f32>],
    target: &Tensor<f32>,
    mask_rng: &mut Rng,
) -> Result<(Tensor<f32>, f32)> {
    let tok_cfg = cfg.tokenizer();
    let enc_cfg = cfg.encoder();
    let core_cfg = cfg.core();
    let dec_cfg = cfg.decoder();
    let mut tape = Tape::<f32>::new();
    let staged = weights.map(&mut |t| tape.constant(t));

    let mut encoded_sources = Vec::with_capacity(sources.len());
    for frame in sources {
        let ts = patchify_embed(&mut tape, frame, &tok_cfg, &staged.tokenizer, TokenRole::Source);
        encoded_sources.push(encode_frame(&mut tape, ts.tokens, &staged.encoder, &enc_cfg));
    }
    let outputs = unroll(&mut tape, &encoded_sources, &staged.core, &core_cfg);
    let ts = patchify_embed(&mut tape, target, &tok_cfg, &staged.tokenizer, TokenRole::Target);
    let masked = mask_target(&mut tape, &ts, cfg.mask_ratio, mask_rng);
    let encoded = encode_frame(&mut tape, masked.tokens, &staged.encoder, &enc_cfg);
    let input = assemble_decoder_input(
        &mut tape,
        &masked,
        encoded,
        &outputs,
        &staged.decoder,
        &dec_cfg,
    )?;
    let patches = decode(&mut tape, &input, &staged.decoder, &dec_cfg);
    let truth = patchify_raw(target, cfg.patch);
    let truth_v = tape.constant(&truth);
    let loss = reconstruction_loss(&mut tape, patches, truth_v);
    let loss_val = tape.data_of(loss)[0];
    let grid = cfg.frame / cfg.patch;
    let frame = crate::decoder::unpatchify(&tape.tensor_of(patches), grid, grid, cfg.patch);
    Ok((frame, loss_val))
}

/// Per-frame features without the recurrent core: encode each frame
/// independently and keep the patch tokens (CLS dropped). The image-model
/// control for the temporal-integration experiments.
pub fn encode_frame_features<E: Scalar>(
    tape: &mut Tape<E>,
    weights: &ModelWeights<Var>,
    cfg: &ModelConfig,
    frame: &Tensor<E>,
) -> Var {
    let tok_cfg = cfg.tokenizer();
    let enc_cfg = cfg.encoder();
    let ts = patchify_embed(tape, frame, &tok_cfg, &weights.tokenizer, TokenRole::Source);
    let encoded = encode_frame(tape, ts.tokens, &weights.encoder, &enc_cfg);
    let rows: Vec<usize> = (1..=cfg.num_patches()).collect();
    tape.gather_rows(encoded, &rows)
}
