//! Cross-attention reconstruction decoder and the pixel L2 objective.
//!
//! Visible target tokens are linearly embedded and placed back at their
//! grid positions; every masked slot is filled with a learnable mask token;
//! Fourier positions are added. Each block runs cross-attention (queries
//! from the grid, keys/values from the concatenated source features), an
//! MLP, and self-attention, with residuals and pre-norm. A final linear
//! projection maps each slot back to its flattened patch pixels.
//!
//! The loss is a plain mean-squared error over the entire frame — no
//! patch-level normalization, and visible patches are not excluded.

use crate::blocks::{cross_block, layernorm, BlockOrder, CrossBlockWeights, LayerNormParams};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tokenizer::{fourier_positions, TokenSet};

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    /// Decoder embedding dim (independent of the encoder dim).
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: f64,
    pub order: BlockOrder,
    pub final_norm: bool,
}

impl DecoderConfig {
    pub fn new(dim: usize, heads: usize, blocks: usize) -> Self {
        assert!(dim % heads == 0, "dim {dim} not divisible by heads {heads}");
        DecoderConfig {
            dim,
            heads,
            blocks,
            mlp_ratio: 4.0,
            order: BlockOrder::CrossMlpSelf,
            final_norm: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DecoderWeights<T> {
    /// [enc_dim, dec_dim] embed for visible target tokens.
    pub target_embed_w: T,
    pub target_embed_b: T,
    /// [enc_dim, dec_dim] embed for source memory tokens.
    pub source_embed_w: T,
    pub source_embed_b: T,
    /// [dec_dim] learnable fill for masked grid slots.
    pub mask_token: T,
    pub blocks: Vec<CrossBlockWeights<T>>,
    pub final_norm: Option<LayerNormParams<T>>,
    /// [dec_dim, P·P·3] projection back to pixels.
    pub out_w: T,
    pub out_b: T,
}

impl<E: Scalar> DecoderWeights<Tensor<E>> {
    pub fn init(cfg: &DecoderConfig, enc_dim: usize, patch: usize, rng: &mut Rng) -> Self {
        let pd = patch * patch * 3;
        DecoderWeights {
            target_embed_w: Tensor::trunc_normal(&[enc_dim, cfg.dim], 0.02, rng).param(),
            target_embed_b: Tensor::zeros(&[cfg.dim]).param(),
            source_embed_w: Tensor::trunc_normal(&[enc_dim, cfg.dim], 0.02, rng).param(),
            source_embed_b: Tensor::zeros(&[cfg.dim]).param(),
            mask_token: Tensor::trunc_normal(&[cfg.dim], 0.02, rng).param(),
            blocks: (0..cfg.blocks)
                .map(|_| CrossBlockWeights::init(cfg.dim, cfg.mlp_ratio, rng))
                .collect(),
            final_norm: cfg.final_norm.then(|| LayerNormParams::init(cfg.dim)),
            out_w: Tensor::trunc_normal(&[cfg.dim, pd], 0.02, rng).param(),
            // Mid-gray output bias so untrained predictions sit at the data mean.
            out_b: Tensor::full(&[pd], E::from_f64(0.5)).param(),
        }
    }
}

impl<T> DecoderWeights<T> {
    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(format!("{prefix}.target_embed.w"), &self.target_embed_w);
        f(format!("{prefix}.target_embed.b"), &self.target_embed_b);
        f(format!("{prefix}.source_embed.w"), &self.source_embed_w);
        f(format!("{prefix}.source_embed.b"), &self.source_embed_b);
        f(format!("{prefix}.mask_token"), &self.mask_token);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("{prefix}.block{i}"), f);
        }
        if let Some(n) = &self.final_norm {
            n.visit(&format!("{prefix}.final_norm"), f);
        }
        f(format!("{prefix}.out.w"), &self.out_w);
        f(format!("{prefix}.out.b"), &self.out_b);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(format!("{prefix}.target_embed.w"), &mut self.target_embed_w);
        f(format!("{prefix}.target_embed.b"), &mut self.target_embed_b);
        f(format!("{prefix}.source_embed.w"), &mut self.source_embed_w);
        f(format!("{prefix}.source_embed.b"), &mut self.source_embed_b);
        f(format!("{prefix}.mask_token"), &mut self.mask_token);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}.block{i}"), f);
        }
        if let Some(n) = &mut self.final_norm {
            n.visit_mut(&format!("{prefix}.final_norm"), f);
        }
        f(format!("{prefix}.out.w"), &mut self.out_w);
        f(format!("{prefix}.out.b"), &mut self.out_b);
    }

    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> DecoderWeights<U> {
        DecoderWeights {
            target_embed_w: f(&self.target_embed_w),
            target_embed_b: f(&self.target_embed_b),
            source_embed_w: f(&self.source_embed_w),
            source_embed_b: f(&self.source_embed_b),
            mask_token: f(&self.mask_token),
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
            final_norm: self.final_norm.as_ref().map(|n| n.map(f)),
            out_w: f(&self.out_w),
            out_b: f(&self.out_b),
        }
    }
}

/// Assembled decoder input: the N-slot target grid and the source memory.
#[derive(Clone, Debug)]
pub struct DecoderInput {
    /// [N, dec_dim]
    pub grid: Var,
    /// [K·(N+1), dec_dim]
    pub memory: Var,
}

/// Build the decoder input from an encoded (masked) target token set and
/// the recurrent core outputs of the K source frames.
pub fn assemble_decoder_input<E: Scalar>(
    tape: &mut Tape<E>,
    target: &TokenSet,
    encoded_target: Var,
    source_outputs: &[Var],
    w: &DecoderWeights<Var>,
    cfg: &DecoderConfig,
) -> Result<DecoderInput> {
    let n = target.num_patches();
    let m = target.positions.len();
    // Duplicate grid positions would silently overwrite a slot.
    let mut seen = vec![false; n];
    for &p in &target.positions {
        if p >= n {
            return Err(Error::Contract(format!("grid index {p} out of {n} slots")));
        }
        if seen[p] {
            return Err(Error::Contract(format!("duplicate grid index {p}")));
        }
        seen[p] = true;
    }
    assert_eq!(
        tape.shape_of(encoded_target)[0],
        m + 1,
        "encoded target rows {:?} do not match {} visible tokens + CLS",
        tape.shape_of(encoded_target),
        m
    );

    // Visible patch tokens (drop CLS), embedded into decoder space.
    let rows: Vec<usize> = (1..=m).collect();
    let visible = tape.gather_rows(encoded_target, &rows);
    let visible = tape.matmul(visible, w.target_embed_w);
    let visible = tape.add_row(visible, w.target_embed_b);

    // Grid: visible token at its recorded position, mask token elsewhere.
    let mask_row = tape.reshape(w.mask_token, &[1, cfg.dim]);
    let stacked = tape.concat_rows(&[visible, mask_row]);
    let mut slot_source = vec![m; n]; // default: the mask row
    for (rank, &pos) in target.positions.iter().enumerate() {
        slot_source[pos] = rank;
    }
    let grid = tape.gather_rows(stacked, &slot_source);
    let pos = fourier_positions::<E>(target.h_patches, target.w_patches, cfg.dim);
    let pos_v = tape.constant(&pos);
    let grid = tape.add(grid, pos_v);

    // Memory: source outputs concatenated along the token axis, embedded.
    let memory = tape.concat_rows(source_outputs);
    let memory = tape.matmul(memory, w.source_embed_w);
    let memory = tape.add_row(memory, w.source_embed_b);

    Ok(DecoderInput { grid, memory })
}

/// Run the decoder blocks and project to pixels: `[N, P·P·3]`.
pub fn decode<E: Scalar>(
    tape: &mut Tape<E>,
    input: &DecoderInput,
    w: &DecoderWeights<Var>,
    cfg: &DecoderConfig,
) -> Var {
    let mut x = input.grid;
    for block in &w.blocks {
        x = cross_block(tape, x, input.memory, block, cfg.heads, cfg.order);
    }
    if let Some(norm) = &w.final_norm {
        x = layernorm(tape, x, norm);
    }
    let out = tape.matmul(x, w.out_w);
    tape.add_row(out, w.out_b)
}

/// Exact inverse of patch flattening: `[N, P·P·3]` rows back to an
/// `[H, W, 3]` frame.
pub fn unpatchify<E: Scalar>(
    patches: &Tensor<E>,
    h_patches: usize,
    w_patches: usize,
    patch: usize,
) -> Tensor<E> {
    let shape = patches.shape();
    assert_eq!(shape.len(), 2, "patches must be 2-d, got {shape:?}");
    assert_eq!(
        shape[0],
        h_patches * w_patches,
        "{} patch rows cannot fill a {}x{} grid",
        shape[0],
        h_patches,
        w_patches
    );
    assert_eq!(shape[1], patch * patch * 3, "patch row length mismatch");
    let (h, w) = (h_patches * patch, w_patches * patch);
    let src = patches.data();
    let mut out = vec![E::ZERO; h * w * 3];
    for pr in 0..h_patches {
        for pc in 0..w_patches {
            let row = (pr * w_patches + pc) * patch * patch * 3;
            for dy in 0..patch {
                for dx in 0..patch {
                    let dst = ((pr * patch + dy) * w + pc * patch + dx) * 3;
                    let s = row + (dy * patch + dx) * 3;
                    out[dst] = src[s];
                    out[dst + 1] = src[s + 1];
                    out[dst + 2] = src[s + 2];
                }
            }
        }
    }
    Tensor::from_vec(&[h, w, 3], out)
}

/// Mean squared error over all elements of two equal-shape tensors on the
/// tape. Pixel-space MSE over patch rows equals MSE over the reassembled
/// frame, since both average the same element multiset.
pub fn reconstruction_loss<E: Scalar>(tape: &mut Tape<E>, recon: Var, target: Var) -> Var {
    assert_eq!(
        tape.shape_of(recon),
        tape.shape_of(target),
        "reconstruction loss shape mismatch: {:?} vs {:?}",
        tape.shape_of(recon),
        tape.shape_of(target)
    );
    let diff = tape.sub(recon, target);
    let sq = tape.mul(diff, diff);
    tape.mean_all(sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tokenizer::{patchify_raw, TokenRole};
    use proptest::prelude::*;

    /// TokenSet with a placeholder `tokens` var; `assemble_decoder_input`
    /// reads the encoded tokens from its explicit argument instead.
    fn token_set(
        tape: &mut Tape<f64>,
        h_patches: usize,
        w_patches: usize,
        positions: Vec<usize>,
    ) -> TokenSet {
        let n = h_patches * w_patches;
        let mut visible = vec![false; n];
        for &p in &positions {
            if p < n {
                visible[p] = true;
            }
        }
        TokenSet {
            tokens: tape.zeros(&[1]),
            role: TokenRole::Target,
            h_patches,
            w_patches,
            positions,
            visible,
        }
    }

    fn staged_weights(
        tape: &mut Tape<f64>,
        cfg: &DecoderConfig,
        enc_dim: usize,
        patch: usize,
        seed: u64,
    ) -> DecoderWeights<Var> {
        let mut rng = Rng::new(seed);
        let w = DecoderWeights::<Tensor<f64>>::init(cfg, enc_dim, patch, &mut rng);
        w.map(&mut |t| tape.leaf(t))
    }

    #[test]
    fn memory_token_count_is_sources_times_tokens() {
        let cfg = DecoderConfig::new(16, 2, 1);
        let mut tape = Tape::<f64>::new();
        let w = staged_weights(&mut tape, &cfg, 8, 2, 1);
        let mut rng = Rng::new(2);
        // K=4 source outputs of (N+1)=65 tokens each.
        let sources: Vec<Var> = (0..4)
            .map(|_| {
                let t = Tensor::<f64>::uniform(&[65, 8], -1.0, 1.0, &mut rng);
                tape.constant(&t)
            })
            .collect();
        let enc_t = Tensor::<f64>::uniform(&[4, 8], -1.0, 1.0, &mut rng);
        let enc = tape.constant(&enc_t);
        let ts = token_set(&mut tape, 8, 8, vec![0, 7, 42]);
        let input = assemble_decoder_input(&mut tape, &ts, enc, &sources, &w, &cfg).unwrap();
        assert_eq!(tape.shape_of(input.memory), &[4 * 65, 16]);
        assert_eq!(tape.shape_of(input.grid), &[64, 16]);
    }

    #[test]
    fn duplicate_grid_position_is_contract_error() {
        let cfg = DecoderConfig::new(16, 2, 1);
        let mut tape = Tape::<f64>::new();
        let w = staged_weights(&mut tape, &cfg, 8, 2, 3);
        let mut rng = Rng::new(4);
        let sources = vec![{
            let t = Tensor::<f64>::uniform(&[5, 8], -1.0, 1.0, &mut rng);
            tape.constant(&t)
        }];
        let enc_t = Tensor::<f64>::uniform(&[3, 8], -1.0, 1.0, &mut rng);
        let enc = tape.constant(&enc_t);
        let ts = token_set(&mut tape, 2, 2, vec![1, 1]);
        let err = assemble_decoder_input(&mut tape, &ts, enc, &sources, &w, &cfg).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn no_masking_means_no_mask_fills() {
        // m = 0: the grid rows must all come from embedded visible tokens —
        // perturbing the mask token must not change the grid.
        let cfg = DecoderConfig::new(16, 2, 0);
        let n = 4;
        let grid_of = |mask_fill: f64| -> Vec<f64> {
            let mut tape = Tape::<f64>::new();
            let mut rng = Rng::new(5);
            let mut store = DecoderWeights::<Tensor<f64>>::init(&cfg, 8, 2, &mut rng);
            store.mask_token = Tensor::full(&[16], mask_fill);
            let w = store.map(&mut |t| tape.leaf(t));
            let mut rng2 = Rng::new(6);
            let enc_t = Tensor::<f64>::uniform(&[n + 1, 8], -1.0, 1.0, &mut rng2);
            let enc = tape.constant(&enc_t);
            let src_t = Tensor::<f64>::uniform(&[5, 8], -1.0, 1.0, &mut rng2);
            let src = tape.constant(&src_t);
            let ts = token_set(&mut tape, 2, 2, vec![0, 1, 2, 3]);
            let input =
                assemble_decoder_input(&mut tape, &ts, enc, &[src], &w, &cfg).unwrap();
            tape.data_of(input.grid).to_vec()
        };
        assert_eq!(grid_of(0.0), grid_of(100.0));
    }

    #[test]
    fn single_visible_token_yields_63_mask_fills() {
        let cfg = DecoderConfig::new(16, 2, 0);
        let mut tape = Tape::<f64>::new();
        let mut rng = Rng::new(7);
        let mut store = DecoderWeights::<Tensor<f64>>::init(&cfg, 8, 2, &mut rng);
        // Make the mask fill recognizable and kill the positional offset by
        // checking differences between slots instead of absolute values.
        store.mask_token = Tensor::full(&[16], 7.0);
        let w = store.map(&mut |t| tape.leaf(t));
        let enc_t = Tensor::<f64>::uniform(&[2, 8], -1.0, 1.0, &mut rng);
        let enc = tape.constant(&enc_t);
        let src_t = Tensor::<f64>::uniform(&[65, 8], -1.0, 1.0, &mut rng);
        let src = tape.constant(&src_t);
        let ts = token_set(&mut tape, 8, 8, vec![9]);
        let input = assemble_decoder_input(&mut tape, &ts, enc, &[src], &w, &cfg).unwrap();
        // Subtract positions to recover the raw fills.
        let pos = fourier_positions::<f64>(8, 8, 16);
        let grid = tape.data_of(input.grid);
        let mut mask_slots = 0;
        for slot in 0..64 {
            let raw: Vec<f64> = (0..16)
                .map(|j| grid[slot * 16 + j] - pos.data()[slot * 16 + j])
                .collect();
            if raw.iter().all(|&v| (v - 7.0).abs() < 1e-9) {
                mask_slots += 1;
            } else {
                assert_eq!(slot, 9, "only slot 9 should hold a visible token");
            }
        }
        assert_eq!(mask_slots, 63);
    }

    #[test]
    fn decode_output_shape_is_patches_by_pixels() {
        let cfg = DecoderConfig::new(16, 2, 2);
        let mut tape = Tape::<f64>::new();
        let w = staged_weights(&mut tape, &cfg, 8, 4, 8);
        let mut rng = Rng::new(9);
        let enc_t = Tensor::<f64>::uniform(&[3, 8], -1.0, 1.0, &mut rng);
        let enc = tape.constant(&enc_t);
        let src_t = Tensor::<f64>::uniform(&[10, 8], -1.0, 1.0, &mut rng);
        let src = tape.constant(&src_t);
        let ts = token_set(&mut tape, 2, 2, vec![0, 3]);
        let input = assemble_decoder_input(&mut tape, &ts, enc, &[src], &w, &cfg).unwrap();
        let out = decode(&mut tape, &input, &w, &cfg);
        assert_eq!(tape.shape_of(out), &[4, 4 * 4 * 3]);
    }

    #[test]
    fn zero_block_identity_projection_echoes_grid() {
        // D_dec == P·P·3 so the output projection can be the identity.
        let patch = 2usize;
        let pd = patch * patch * 3; // 12
        let cfg = DecoderConfig {
            dim: pd,
            heads: 2,
            blocks: 0,
            mlp_ratio: 4.0,
            order: BlockOrder::CrossMlpSelf,
            final_norm: false,
        };
        let mut tape = Tape::<f64>::new();
        let mut rng = Rng::new(10);
        let mut store = DecoderWeights::<Tensor<f64>>::init(&cfg, 8, patch, &mut rng);
        let mut eye = Tensor::<f64>::zeros(&[pd, pd]);
        for i in 0..pd {
            eye.data_mut()[i * pd + i] = 1.0;
        }
        store.out_w = eye;
        store.out_b = Tensor::zeros(&[pd]);
        let w = store.map(&mut |t| tape.leaf(t));
        let enc_t = Tensor::<f64>::uniform(&[3, 8], -1.0, 1.0, &mut rng);
        let enc = tape.constant(&enc_t);
        let src_t = Tensor::<f64>::uniform(&[5, 8], -1.0, 1.0, &mut rng);
        let src = tape.constant(&src_t);
        let ts = token_set(&mut tape, 2, 2, vec![1, 2]);
        let input = assemble_decoder_input(&mut tape, &ts, enc, &[src], &w, &cfg).unwrap();
        let out = decode(&mut tape, &input, &w, &cfg);
        assert_eq!(tape.data_of(out), tape.data_of(input.grid));
    }

    #[test]
    fn zero_memory_and_zero_cross_value_depend_only_on_visible_tokens() {
        let cfg = DecoderConfig::new(16, 2, 1);
        let patch = 2usize;
        let run = |mem_fill: f64, vis_bump: f64| -> Vec<f64> {
            let mut tape = Tape::<f64>::new();
            let mut rng = Rng::new(11);
            let mut store = DecoderWeights::<Tensor<f64>>::init(&cfg, 8, patch, &mut rng);
            for b in &mut store.blocks {
                b.cross_attn.wv = Tensor::zeros(&[16, 16]);
                b.cross_attn.bv = Tensor::zeros(&[16]);
            }
            let w = store.map(&mut |t| tape.leaf(t));
            let mut rng2 = Rng::new(12);
            let mut enc_t = Tensor::<f64>::uniform(&[3, 8], -1.0, 1.0, &mut rng2);
            enc_t.data_mut()[9] += vis_bump;
            let enc = tape.constant(&enc_t);
            let src_t = Tensor::<f64>::full(&[5, 8], mem_fill);
            let src = tape.constant(&src_t);
            let ts = token_set(&mut tape, 2, 2, vec![0, 2]);
            let input = assemble_decoder_input(&mut tape, &ts, enc, &[src], &w, &cfg).unwrap();
            let out = decode(&mut tape, &input, &w, &cfg);
            tape.data_of(out).to_vec()
        };
        // Changing the memory does nothing...
        assert_eq!(run(0.0, 0.0), run(3.0, 0.0));
        // ...but changing a visible token does.
        assert_ne!(run(0.0, 0.0), run(0.0, 1.0));
    }

    #[test]
    fn unpatchify_single_patch_is_identity_reshape() {
        let mut rng = Rng::new(13);
        let t = Tensor::<f64>::uniform(&[1, 4 * 4 * 3], 0.0, 1.0, &mut rng);
        let frame = unpatchify(&t, 1, 1, 4);
        assert_eq!(frame.shape(), &[4, 4, 3]);
        assert_eq!(frame.data(), t.data());
    }

    #[test]
    fn reconstruction_loss_zero_iff_equal() {
        let mut tape = Tape::<f64>::new();
        let mut rng = Rng::new(14);
        let a_t = Tensor::<f64>::uniform(&[4, 12], 0.0, 1.0, &mut rng);
        let a = tape.constant(&a_t);
        let same = tape.constant(&a_t);
        let zero = reconstruction_loss(&mut tape, a, same);
        assert_eq!(tape.data_of(zero)[0], 0.0);

        // Constant offset of 1 gives exactly 1.0.
        let shifted = tape.affine(a, 1.0, 1.0);
        let one = reconstruction_loss(&mut tape, shifted, a);
        assert!((tape.data_of(one)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_loss_matches_naive_double_loop() {
        let mut rng = Rng::new(15);
        let a_t = Tensor::<f64>::uniform(&[16, 16 * 3], 0.0, 1.0, &mut rng);
        let b_t = Tensor::<f64>::uniform(&[16, 16 * 3], 0.0, 1.0, &mut rng);
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(&a_t);
        let b = tape.constant(&b_t);
        let loss = reconstruction_loss(&mut tape, a, b);
        let mut naive = 0.0;
        for i in 0..16 {
            for j in 0..16 * 3 {
                let d = a_t.data()[i * 48 + j] - b_t.data()[i * 48 + j];
                naive += d * d;
            }
        }
        naive /= (16 * 48) as f64;
        assert!((tape.data_of(loss)[0] - naive).abs() < 1e-7);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn unpatchify_inverts_patchify(seed in 0u64..10_000, hp in 1usize..4, wp in 1usize..4) {
            let patch = 2usize;
            let mut rng = Rng::new(seed);
            let frame = Tensor::<f64>::uniform(&[hp * patch, wp * patch, 3], 0.0, 1.0, &mut rng);
            let patches = patchify_raw(&frame, patch);
            let back = unpatchify(&patches, hp, wp, patch);
            prop_assert_eq!(back.data(), frame.data());
        }
    }
}
