//! Synthetic video corpora and training-clip sampling.
//!
//! Three deterministic stimulus families make the model's temporal claims
//! testable without any real data:
//!
//! * `NoiseSquare` — a frozen white-noise square translating over a frozen
//!   white-noise background. Every frame in isolation is plain white noise;
//!   only temporal integration reveals the square.
//! * `MovingShape` — a solid bright square moving over a smooth static
//!   background at constant velocity, so the target position is predictable
//!   from two or more source frames and ambiguous from one.
//! * `TranslatingTexture` — the whole frame translates rigidly, giving exact
//!   dense patch correspondence for the label-propagation oracle.
//!
//! Generation is a pure function of the spec: equal specs give bit-identical
//! clips. Motion wraps toroidally so the stimulus is present in every frame.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SynthKind {
    NoiseSquare,
    MovingShape,
    TranslatingTexture,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::NoiseSquare => "noise_square",
            SynthKind::MovingShape => "moving_shape",
            SynthKind::TranslatingTexture => "translating_texture",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "noise_square" => Ok(SynthKind::NoiseSquare),
            "moving_shape" => Ok(SynthKind::MovingShape),
            "translating_texture" => Ok(SynthKind::TranslatingTexture),
            _ => Err(Error::Parse(format!("unknown stimulus kind '{s}'"))),
        }
    }
}

/// Stimulus description. `truth_patch` is the patch size at which the
/// ground-truth label maps are rasterized; start positions snap to that
/// grid so patch-level truth stays exact for patch-aligned velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub square_size: usize,
    /// Pixels per frame, (dy, dx).
    pub velocity: (i64, i64),
    pub seed: u64,
    pub truth_patch: usize,
}

impl SynthSpec {
    /// Desk-scale defaults: 64×64 frames, 64 frames, 16-px square, 8-px patches.
    pub fn new(kind: SynthKind, seed: u64) -> Self {
        SynthSpec {
            kind,
            t: 64,
            h: 64,
            w: 64,
            square_size: 16,
            velocity: (0, 8),
            seed,
            truth_patch: 8,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.t == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::Spec("zero extent".into()));
        }
        if self.truth_patch == 0
            || self.h % self.truth_patch != 0
            || self.w % self.truth_patch != 0
        {
            return Err(Error::Spec(format!(
                "truth_patch {} must divide frame extents {}x{}",
                self.truth_patch, self.h, self.w
            )));
        }
        match self.kind {
            SynthKind::NoiseSquare | SynthKind::MovingShape => {
                if self.square_size > self.h.min(self.w) {
                    return Err(Error::Spec(format!(
                        "square {} larger than frame {}x{}",
                        self.square_size, self.h, self.w
                    )));
                }
            }
            SynthKind::TranslatingTexture => {
                let p = self.truth_patch as i64;
                if self.velocity.0 % p != 0 || self.velocity.1 % p != 0 {
                    return Err(Error::Spec(format!(
                        "translating_texture needs patch-aligned velocity, got {:?} with patch {}",
                        self.velocity, self.truth_patch
                    )));
                }
            }
        }
        Ok(())
    }
}

/// T frames of H×W×3 pixels in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    /// Row-major T×H×W×3.
    pub frames: Vec<f32>,
    /// Nominal frame rate, metadata only.
    pub fps_tag: u32,
}

impl VideoClip {
    pub fn new(t: usize, h: usize, w: usize, frames: Vec<f32>) -> Self {
        assert_eq!(frames.len(), t * h * w * 3, "clip data length mismatch");
        VideoClip {
            t,
            h,
            w,
            frames,
            fps_tag: 25,
        }
    }

    pub fn frame_data(&self, i: usize) -> &[f32] {
        let n = self.h * self.w * 3;
        &self.frames[i * n..(i + 1) * n]
    }

    /// Frame `i` as an `[H, W, 3]` tensor.
    pub fn frame(&self, i: usize) -> Tensor<f32> {
        Tensor::from_vec(&[self.h, self.w, 3], self.frame_data(i).to_vec())
    }

    pub fn truncated(&self, t: usize) -> VideoClip {
        assert!(t <= self.t);
        VideoClip {
            t,
            h: self.h,
            w: self.w,
            frames: self.frames[..t * self.h * self.w * 3].to_vec(),
            fps_tag: self.fps_tag,
        }
    }
}

/// Patch-level ground truth, one label map per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceTruth {
    pub h_patches: usize,
    pub w_patches: usize,
    /// labels[t][pr * w_patches + pc]
    pub labels: Vec<Vec<u32>>,
}

impl CorrespondenceTruth {
    pub fn frame(&self, t: usize) -> &[u32] {
        &self.labels[t]
    }
}

fn fill_uniform(rng: &mut Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.uniform() as f32).collect()
}

fn wrap(v: i64, n: usize) -> usize {
    v.rem_euclid(n as i64) as usize
}

/// Paste a patch at (top, left) with toroidal wrap.
fn paste_wrapped(
    frame: &mut [f32],
    h: usize,
    w: usize,
    patch: &[f32],
    ph: usize,
    pw: usize,
    top: usize,
    left: usize,
) {
    for dy in 0..ph {
        let y = (top + dy) % h;
        for dx in 0..pw {
            let x = (left + dx) % w;
            for c in 0..3 {
                frame[(y * w + x) * 3 + c] = patch[(dy * pw + dx) * 3 + c];
            }
        }
    }
}

/// Pixel mask of the square at (top, left), toroidal.
fn square_mask(h: usize, w: usize, s: usize, top: usize, left: usize) -> Vec<bool> {
    let mut mask = vec![false; h * w];
    for dy in 0..s {
        let y = (top + dy) % h;
        for dx in 0..s {
            let x = (left + dx) % w;
            mask[y * w + x] = true;
        }
    }
    mask
}

/// Patch labels from a pixel mask: a patch is labeled 1 when at least half
/// of its pixels are covered.
fn mask_to_patch_labels(mask: &[bool], h: usize, w: usize, p: usize) -> Vec<u32> {
    let (hp, wp) = (h / p, w / p);
    let mut labels = vec![0u32; hp * wp];
    let half = (p * p) / 2;
    for pr in 0..hp {
        for pc in 0..wp {
            let mut covered = 0;
            for dy in 0..p {
                for dx in 0..p {
                    if mask[(pr * p + dy) * w + pc * p + dx] {
                        covered += 1;
                    }
                }
            }
            if covered >= half.max(1) {
                labels[pr * wp + pc] = 1;
            }
        }
    }
    labels
}

/// Smooth per-clip background: an 8×8 control grid of uniform noise,
/// bilinearly upsampled.
fn smooth_background(h: usize, w: usize, rng: &mut Rng) -> Vec<f32> {
    let g = 8usize;
    let ctrl = fill_uniform(rng, g * g * 3);
    let mut out = vec![0.0f32; h * w * 3];
    for y in 0..h {
        let fy = y as f32 / h as f32 * (g - 1) as f32;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(g - 1);
        let ty = fy - y0 as f32;
        for x in 0..w {
            let fx = x as f32 / w as f32 * (g - 1) as f32;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(g - 1);
            let tx = fx - x0 as f32;
            for c in 0..3 {
                let v00 = ctrl[(y0 * g + x0) * 3 + c];
                let v01 = ctrl[(y0 * g + x1) * 3 + c];
                let v10 = ctrl[(y1 * g + x0) * 3 + c];
                let v11 = ctrl[(y1 * g + x1) * 3 + c];
                let top = v00 + (v01 - v00) * tx;
                let bot = v10 + (v11 - v10) * tx;
                out[(y * w + x) * 3 + c] = top + (bot - top) * ty;
            }
        }
    }
    out
}

/// Generate a clip plus its patch-level ground truth.
pub fn generate(spec: &SynthSpec) -> Result<(VideoClip, CorrespondenceTruth)> {
    spec.validate()?;
    let (t, h, w, p) = (spec.t, spec.h, spec.w, spec.truth_patch);
    let (hp, wp) = (h / p, w / p);
    let frame_n = h * w * 3;
    let mut frames = vec![0.0f32; t * frame_n];
    let mut labels = Vec::with_capacity(t);

    match spec.kind {
        SynthKind::NoiseSquare | SynthKind::MovingShape => {
            let s = spec.square_size;
            let mut bg_rng = Rng::stream(spec.seed, &[1]);
            let background = if spec.kind == SynthKind::NoiseSquare {
                fill_uniform(&mut bg_rng, frame_n)
            } else {
                smooth_background(h, w, &mut bg_rng)
            };
            let mut sq_rng = Rng::stream(spec.seed, &[2]);
            let patch = if spec.kind == SynthKind::NoiseSquare {
                fill_uniform(&mut sq_rng, s * s * 3)
            } else {
                // Solid bright color, one draw per channel.
                let color = [
                    sq_rng.uniform_in(0.7, 1.0) as f32,
                    sq_rng.uniform_in(0.7, 1.0) as f32,
                    sq_rng.uniform_in(0.7, 1.0) as f32,
                ];
                let mut v = Vec::with_capacity(s * s * 3);
                for _ in 0..s * s {
                    v.extend_from_slice(&color);
                }
                v
            };
            // Start position snapped to the truth grid.
            let mut pos_rng = Rng::stream(spec.seed, &[3]);
            let top0 = pos_rng.below(hp as u64) as i64 * p as i64;
            let left0 = pos_rng.below(wp as u64) as i64 * p as i64;
            for ti in 0..t {
                let top = wrap(top0 + spec.velocity.0 * ti as i64, h);
                let left = wrap(left0 + spec.velocity.1 * ti as i64, w);
                let frame = &mut frames[ti * frame_n..(ti + 1) * frame_n];
                frame.copy_from_slice(&background);
                paste_wrapped(frame, h, w, &patch, s, s, top, left);
                let mask = square_mask(h, w, s, top, left);
                labels.push(mask_to_patch_labels(&mask, h, w, p));
            }
        }
        SynthKind::TranslatingTexture => {
            let mut rng = Rng::stream(spec.seed, &[1]);
            let base = fill_uniform(&mut rng, frame_n);
            let (vy, vx) = spec.velocity;
            for ti in 0..t {
                let frame = &mut frames[ti * frame_n..(ti + 1) * frame_n];
                for y in 0..h {
                    let sy = wrap(y as i64 - vy * ti as i64, h);
                    for x in 0..w {
                        let sx = wrap(x as i64 - vx * ti as i64, w);
                        for c in 0..3 {
                            frame[(y * w + x) * 3 + c] = base[(sy * w + sx) * 3 + c];
                        }
                    }
                }
                // Each patch is labeled by its source patch index at frame 0.
                let (pvy, pvx) = (vy / p as i64, vx / p as i64);
                let mut map = vec![0u32; hp * wp];
                for pr in 0..hp {
                    for pc in 0..wp {
                        let sr = wrap(pr as i64 - pvy * ti as i64, hp);
                        let sc = wrap(pc as i64 - pvx * ti as i64, wp);
                        map[pr * wp + pc] = (sr * wp + sc) as u32;
                    }
                }
                labels.push(map);
            }
        }
    }

    Ok((
        VideoClip::new(t, h, w, frames),
        CorrespondenceTruth {
            h_patches: hp,
            w_patches: wp,
            labels,
        },
    ))
}

// ── training-clip sampling ───────────────────────────────────────────

/// One training example: K consecutive source frames from the start of the
/// clip, plus `n_targets` future frames each at an independent uniform gap
/// after the last source frame.
#[derive(Clone, Debug)]
pub struct TrainSample {
    /// `[H, W, 3]` tensors.
    pub sources: Vec<Tensor<f32>>,
    /// (frame, gap in frames after the last source frame)
    pub targets: Vec<(Tensor<f32>, usize)>,
}

#[derive(Copy, Clone, Debug)]
pub struct SampleConfig {
    pub k_sources: usize,
    pub n_targets: usize,
    pub gap_min: usize,
    pub gap_max: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            k_sources: 4,
            n_targets: 4,
            gap_min: 4,
            gap_max: 48,
        }
    }
}

pub fn sample_training_clip(
    clip: &VideoClip,
    cfg: &SampleConfig,
    rng: &mut Rng,
) -> Result<TrainSample> {
    if cfg.k_sources == 0 || cfg.n_targets == 0 {
        return Err(Error::Sampling("need at least 1 source and 1 target".into()));
    }
    if cfg.gap_min > cfg.gap_max || cfg.gap_min == 0 {
        return Err(Error::Sampling(format!(
            "bad gap range [{}, {}]",
            cfg.gap_min, cfg.gap_max
        )));
    }
    let last_source = cfg.k_sources - 1;
    if last_source + cfg.gap_max >= clip.t {
        return Err(Error::Sampling(format!(
            "clip of {} frames too short for {} sources with max gap {}",
            clip.t, cfg.k_sources, cfg.gap_max
        )));
    }
    let sources = (0..cfg.k_sources).map(|i| clip.frame(i)).collect();
    let mut targets = Vec::with_capacity(cfg.n_targets);
    for _ in 0..cfg.n_targets {
        let gap = rng.range_inclusive(cfg.gap_min as i64, cfg.gap_max as i64) as usize;
        targets.push((clip.frame(last_source + gap), gap));
    }
    Ok(TrainSample { sources, targets })
}

// ── augmentation ─────────────────────────────────────────────────────

#[derive(Copy, Clone, Debug)]
pub struct AugmentConfig {
    pub flip_p: f64,
    pub scale: (f64, f64),
    pub aspect: (f64, f64),
    pub out_h: usize,
    pub out_w: usize,
}

impl AugmentConfig {
    pub fn new(out_h: usize, out_w: usize) -> Self {
        AugmentConfig {
            flip_p: 0.5,
            scale: (0.3, 1.0),
            aspect: (0.75, 1.25),
            out_h,
            out_w,
        }
    }

    /// Flip-only config; the crop becomes the identity resize.
    pub fn identity(out_h: usize, out_w: usize) -> Self {
        AugmentConfig {
            flip_p: 0.5,
            scale: (1.0, 1.0),
            aspect: (1.0, 1.0),
            out_h,
            out_w,
        }
    }
}

/// Catmull-Rom kernel (a = -0.5).
fn catmull_rom(x: f32) -> f32 {
    let a = -0.5f32;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic crop-and-resize of one frame, clamped to [0, 1].
#[allow(clippy::too_many_arguments)]
fn bicubic_crop_resize(
    src: &[f32],
    _h: usize,
    w: usize,
    top: usize,
    left: usize,
    crop_h: usize,
    crop_w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    let mut out = vec![0.0f32; out_h * out_w * 3];
    let sy = crop_h as f32 / out_h as f32;
    let sx = crop_w as f32 / out_w as f32;
    let clamp_y = |v: i64| -> usize { v.clamp(top as i64, (top + crop_h - 1) as i64) as usize };
    let clamp_x = |v: i64| -> usize { v.clamp(left as i64, (left + crop_w - 1) as i64) as usize };
    for yo in 0..out_h {
        let fy = top as f32 + (yo as f32 + 0.5) * sy - 0.5;
        let y0 = fy.floor() as i64;
        let ty = fy - y0 as f32;
        let mut wy = [0.0f32; 4];
        for (i, wv) in wy.iter_mut().enumerate() {
            *wv = catmull_rom(ty - (i as f32 - 1.0));
        }
        for xo in 0..out_w {
            let fx = left as f32 + (xo as f32 + 0.5) * sx - 0.5;
            let x0 = fx.floor() as i64;
            let tx = fx - x0 as f32;
            let mut wx = [0.0f32; 4];
            for (i, wv) in wx.iter_mut().enumerate() {
                *wv = catmull_rom(tx - (i as f32 - 1.0));
            }
            for c in 0..3 {
                let mut acc = 0.0f32;
                for (i, &wyv) in wy.iter().enumerate() {
                    let yy = clamp_y(y0 + i as i64 - 1);
                    let mut row_acc = 0.0f32;
                    for (j, &wxv) in wx.iter().enumerate() {
                        let xx = clamp_x(x0 + j as i64 - 1);
                        row_acc += wxv * src[(yy * w + xx) * 3 + c];
                    }
                    acc += wyv * row_acc;
                }
                out[(yo * out_w + xo) * 3 + c] = acc.clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Horizontal flip applied jointly to all frames with probability `flip_p`,
/// then an independent random resized crop per frame (bicubic, Catmull-Rom).
pub fn augment(clip: &VideoClip, cfg: &AugmentConfig, rng: &mut Rng) -> VideoClip {
    let (h, w) = (clip.h, clip.w);
    let flip = rng.coin(cfg.flip_p);
    let frame_n = h * w * 3;
    let mut out = Vec::with_capacity(clip.t * cfg.out_h * cfg.out_w * 3);
    for ti in 0..clip.t {
        let mut frame = clip.frame_data(ti).to_vec();
        if flip {
            flip_horizontal(&mut frame, h, w);
        }
        // Random resized crop, torchvision-style with a bounded retry loop.
        let area = (h * w) as f64;
        let mut crop = None;
        for _ in 0..10 {
            let target_area = area * rng.uniform_in(cfg.scale.0, cfg.scale.1);
            let aspect = rng.uniform_in(cfg.aspect.0, cfg.aspect.1);
            let cw = (target_area * aspect).sqrt().round() as usize;
            let ch = (target_area / aspect).sqrt().round() as usize;
            if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
                let top = rng.below((h - ch + 1) as u64) as usize;
                let left = rng.below((w - cw + 1) as u64) as usize;
                crop = Some((top, left, ch, cw));
                break;
            }
        }
        let (top, left, ch, cw) = crop.unwrap_or((0, 0, h, w));
        let resized =
            bicubic_crop_resize(&frame, h, w, top, left, ch, cw, cfg.out_h, cfg.out_w);
        out.extend_from_slice(&resized);
        debug_assert_eq!(frame.len(), frame_n);
    }
    let mut res = VideoClip::new(clip.t, cfg.out_h, cfg.out_w, out);
    res.fps_tag = clip.fps_tag;
    res
}

pub fn flip_horizontal(frame: &mut [f32], h: usize, w: usize) {
    for y in 0..h {
        for x in 0..w / 2 {
            let xm = w - 1 - x;
            for c in 0..3 {
                frame.swap((y * w + x) * 3 + c, (y * w + xm) * 3 + c);
            }
        }
    }
}
