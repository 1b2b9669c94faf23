//! Frame tokenization: patchify, linear embed, Fourier positions, CLS,
//! and random target masking.
//!
//! Masked tokens are dropped from the encoder input entirely (asymmetric
//! masked-autoencoder style); they reappear only in the decoder as learnable
//! mask fills. The CLS token (row 0) is never masked.

use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct TokenizerConfig {
    /// Patch size in pixels.
    pub patch: usize,
    /// Embedding dimension.
    pub dim: usize,
    /// Fraction of target patch tokens hidden from the encoder.
    pub mask_ratio: f64,
    pub frame_h: usize,
    pub frame_w: usize,
    /// Disable to make all tokens of a constant frame identical.
    pub positions: bool,
}

impl TokenizerConfig {
    pub fn new(patch: usize, dim: usize, mask_ratio: f64, frame_h: usize, frame_w: usize) -> Self {
        assert!(patch > 0 && frame_h % patch == 0 && frame_w % patch == 0,
            "patch {patch} must divide frame {frame_h}x{frame_w}");
        assert!((0.0..1.0).contains(&mask_ratio), "mask ratio {mask_ratio} outside [0,1)");
        TokenizerConfig {
            patch,
            dim,
            mask_ratio,
            frame_h,
            frame_w,
            positions: true,
        }
    }

    pub fn h_patches(&self) -> usize {
        self.frame_h / self.patch
    }

    pub fn w_patches(&self) -> usize {
        self.frame_w / self.patch
    }

    /// N = h·w patch tokens per frame.
    pub fn num_patches(&self) -> usize {
        self.h_patches() * self.w_patches()
    }

    /// Flattened patch length (P·P·3).
    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    /// Number of visible target tokens: M = max(1, ⌊(1−m)·N⌋).
    pub fn visible_count(&self) -> usize {
        visible_count(self.num_patches(), self.mask_ratio)
    }
}

pub fn visible_count(num_patches: usize, mask_ratio: f64) -> usize {
    (((1.0 - mask_ratio) * num_patches as f64).floor() as usize).max(1)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TokenRole {
    Source,
    Target,
}

/// Embedded tokens for one frame: row 0 is CLS, rows 1.. are patch tokens
/// at `positions` (grid indices, row-major). `visible[n]` records which
/// patches survived masking; source frames keep all of them.
#[derive(Clone, Debug)]
pub struct TokenSet {
    pub tokens: Var,
    pub role: TokenRole,
    pub h_patches: usize,
    pub w_patches: usize,
    /// Grid index of each patch token row (row i+1 sits at positions[i]).
    pub positions: Vec<usize>,
    /// Per-grid-cell visibility, length N.
    pub visible: Vec<bool>,
}

impl TokenSet {
    pub fn num_patches(&self) -> usize {
        self.h_patches * self.w_patches
    }

    pub fn grid_position(&self, token_row: usize) -> (usize, usize) {
        let idx = self.positions[token_row];
        (idx / self.w_patches, idx % self.w_patches)
    }
}

/// Shared tokenizer parameters, generic over storage (`Tensor<E>`) or taped
/// handles (`Var`).
#[derive(Clone, Debug)]
pub struct TokenizerWeights<T> {
    /// [P·P·3, D]
    pub patch_proj: T,
    /// [D]
    pub patch_bias: T,
    /// [D]
    pub cls: T,
}

impl<E: Scalar> TokenizerWeights<Tensor<E>> {
    pub fn init(cfg: &TokenizerConfig, rng: &mut Rng) -> Self {
        TokenizerWeights {
            patch_proj: Tensor::trunc_normal(&[cfg.patch_dim(), cfg.dim], 0.02, rng).param(),
            patch_bias: Tensor::zeros(&[cfg.dim]).param(),
            cls: Tensor::trunc_normal(&[cfg.dim], 0.02, rng).param(),
        }
    }
}

impl<T> TokenizerWeights<T> {
    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(format!("{prefix}.patch_proj.w"), &self.patch_proj);
        f(format!("{prefix}.patch_proj.b"), &self.patch_bias);
        f(format!("{prefix}.cls"), &self.cls);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(format!("{prefix}.patch_proj.w"), &mut self.patch_proj);
        f(format!("{prefix}.patch_proj.b"), &mut self.patch_bias);
        f(format!("{prefix}.cls"), &mut self.cls);
    }

    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> TokenizerWeights<U> {
        TokenizerWeights {
            patch_proj: f(&self.patch_proj),
            patch_bias: f(&self.patch_bias),
            cls: f(&self.cls),
        }
    }
}

/// Flatten an H×W×3 frame into [N, P·P·3] patch rows (row-major patch scan,
/// row-major pixels within each patch).
pub fn patchify_raw<E: Scalar>(frame: &Tensor<E>, patch: usize) -> Tensor<E> {
    let shape = frame.shape();
    assert_eq!(shape.len(), 3, "frame must be H×W×3, got {shape:?}");
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    assert_eq!(c, 3, "frame must have 3 channels");
    assert!(h % patch == 0 && w % patch == 0, "patch {patch} must divide {h}x{w}");
    let (hp, wp) = (h / patch, w / patch);
    let pd = patch * patch * 3;
    let src = frame.data();
    let mut out = Vec::with_capacity(hp * wp * pd);
    for pr in 0..hp {
        for pc in 0..wp {
            for dy in 0..patch {
                for dx in 0..patch {
                    let base = ((pr * patch + dy) * w + pc * patch + dx) * 3;
                    out.extend_from_slice(&src[base..base + 3]);
                }
            }
        }
    }
    Tensor::from_vec(&[hp * wp, pd], out)
}

/// Deterministic sin/cos features of the normalized (row, col) grid at
/// log-spaced frequencies: D/4 frequencies per axis per phase, rows first.
pub fn fourier_positions<E: Scalar>(h_patches: usize, w_patches: usize, dim: usize) -> Tensor<E> {
    assert!(dim % 4 == 0, "positional dim {dim} must be divisible by 4");
    let nf = dim / 4;
    let freqs = |extent: usize| -> Vec<f64> {
        let max_f = (extent as f64 / 2.0).max(1.0);
        (0..nf)
            .map(|j| {
                if nf == 1 {
                    1.0
                } else {
                    (max_f.ln() * j as f64 / (nf - 1) as f64).exp()
                }
            })
            .collect()
    };
    let row_freqs = freqs(h_patches);
    let col_freqs = freqs(w_patches);
    let n = h_patches * w_patches;
    let mut out = Vec::with_capacity(n * dim);
    let tau = 2.0 * std::f64::consts::PI;
    for r in 0..h_patches {
        for c in 0..w_patches {
            let rn = r as f64 / h_patches as f64;
            let cn = c as f64 / w_patches as f64;
            for &f in &row_freqs {
                out.push(E::from_f64((tau * f * rn).sin()));
            }
            for &f in &row_freqs {
                out.push(E::from_f64((tau * f * rn).cos()));
            }
            for &f in &col_freqs {
                out.push(E::from_f64((tau * f * cn).sin()));
            }
            for &f in &col_freqs {
                out.push(E::from_f64((tau * f * cn).cos()));
            }
        }
    }
    Tensor::from_vec(&[n, dim], out)
}

/// Patchify a frame, project, add positions, prepend CLS.
///
/// Weights are shared across all frames and both roles; the caller stages
/// them once per tape and reuses the same handles everywhere.
pub fn patchify_embed<E: Scalar>(
    tape: &mut Tape<E>,
    frame: &Tensor<E>,
    cfg: &TokenizerConfig,
    weights: &TokenizerWeights<Var>,
    role: TokenRole,
) -> TokenSet {
    assert_eq!(
        frame.shape(),
        &[cfg.frame_h, cfg.frame_w, 3],
        "frame shape {:?} does not match config {}x{}x3",
        frame.shape(),
        cfg.frame_h,
        cfg.frame_w
    );
    let patches = patchify_raw(frame, cfg.patch);
    let pv = tape.constant(&patches);
    let projected = tape.matmul(pv, weights.patch_proj);
    let mut x = tape.add_row(projected, weights.patch_bias);
    if cfg.positions {
        let pos = fourier_positions::<E>(cfg.h_patches(), cfg.w_patches(), cfg.dim);
        let pos_v = tape.constant(&pos);
        x = tape.add(x, pos_v);
    }
    let cls_row = tape.reshape(weights.cls, &[1, cfg.dim]);
    let tokens = tape.concat_rows(&[cls_row, x]);
    let n = cfg.num_patches();
    TokenSet {
        tokens,
        role,
        h_patches: cfg.h_patches(),
        w_patches: cfg.w_patches(),
        positions: (0..n).collect(),
        visible: vec![true; n],
    }
}

/// Keep a uniformly random subset of exactly M = max(1, ⌊(1−m)·N⌋) patch
/// tokens; drop the rest from the sequence. CLS survives unconditionally.
pub fn mask_target<E: Scalar>(
    tape: &mut Tape<E>,
    tokens: &TokenSet,
    mask_ratio: f64,
    rng: &mut Rng,
) -> TokenSet {
    assert_eq!(tokens.role, TokenRole::Target, "mask_target on a source frame");
    let n = tokens.num_patches();
    assert_eq!(tokens.positions.len(), n, "mask_target needs an unmasked token set");
    let m = visible_count(n, mask_ratio);
    let mut keep = rng.choose_m_of_n(m, n);
    keep.sort_unstable();
    let mut rows = Vec::with_capacity(m + 1);
    rows.push(0); // CLS
    rows.extend(keep.iter().map(|&i| i + 1));
    let gathered = tape.gather_rows(tokens.tokens, &rows);
    let mut visible = vec![false; n];
    for &i in &keep {
        visible[i] = true;
    }
    TokenSet {
        tokens: gathered,
        role: TokenRole::Target,
        h_patches: tokens.h_patches,
        w_patches: tokens.w_patches,
        positions: keep,
        visible,
    }
}
