//! Non-parametric nearest-neighbor label propagation.
//!
//! Frame-0 labels are pushed forward autoregressively: each query patch
//! gathers cosine affinities to all patches of the context frames (the
//! previous `context_frames` frames plus frame 0) within a spatial search
//! radius, keeps the top-k, softmaxes them at temperature τ, and takes the
//! affinity-weighted label vote. Ties break toward the smaller label, and
//! candidate ordering is total, so propagation is fully deterministic.

use crate::error::{Error, Result};
use crate::eval::features::FeatureVolume;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct PropagationConfig {
    pub temperature: f64,
    pub top_k: usize,
    pub context_frames: usize,
    /// Chebyshev radius in patch units.
    pub search_radius: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            temperature: 0.7,
            top_k: 7,
            context_frames: 20,
            search_radius: 20,
        }
    }
}

fn l2_normalized(features: &FeatureVolume) -> Vec<f32> {
    let mut out = features.data.clone();
    let d = features.d;
    for chunk in out.chunks_mut(d) {
        let norm: f32 = chunk.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            for v in chunk {
                *v /= norm;
            }
        }
    }
    out
}

/// Propagate frame-0 patch labels across the whole volume. Returns one
/// label map per frame (frame 0 is the input).
pub fn propagate_labels(
    features: &FeatureVolume,
    first_frame_labels: &[u32],
    cfg: &PropagationConfig,
) -> Result<Vec<Vec<u32>>> {
    let (t, n) = (features.t, features.n);
    if first_frame_labels.len() != n {
        return Err(Error::Eval(format!(
            "expected {n} first-frame labels, got {}",
            first_frame_labels.len()
        )));
    }
    if cfg.temperature <= 0.0 || cfg.top_k == 0 {
        return Err(Error::Eval("temperature must be > 0 and top_k >= 1".into()));
    }
    let wp = features.w_patches;
    let normed = l2_normalized(features);
    let d = features.d;
    let feat = |ti: usize, p: usize| -> &[f32] {
        let base = (ti * n + p) * d;
        &normed[base..base + d]
    };

    let mut labels: Vec<Vec<u32>> = vec![first_frame_labels.to_vec()];
    for ti in 1..t {
        // Context: frame 0 plus the previous `context_frames` frames.
        let from = ti.saturating_sub(cfg.context_frames);
        let mut context: Vec<usize> = Vec::new();
        if from > 0 {
            context.push(0);
        }
        context.extend(from..ti);

        let mut frame_labels = vec![0u32; n];
        for q in 0..n {
            let (qr, qc) = (q / wp, q % wp);
            let qf = feat(ti, q);
            // (affinity, context frame, patch) for every candidate in radius.
            let mut cands: Vec<(f32, usize, usize)> = Vec::new();
            let collect = |restrict_radius: bool, cands: &mut Vec<(f32, usize, usize)>| {
                for &cf in &context {
                    for p in 0..n {
                        if restrict_radius {
                            let (pr, pc) = (p / wp, p % wp);
                            let dr = qr.abs_diff(pr);
                            let dc = qc.abs_diff(pc);
                            if dr.max(dc) > cfg.search_radius {
                                continue;
                            }
                        }
                        let dot: f32 = qf.iter().zip(feat(cf, p)).map(|(a, b)| a * b).sum();
                        cands.push((dot, cf, p));
                    }
                }
            };
            collect(true, &mut cands);
            if cands.is_empty() {
                // Radius excluded everything: fall back to unrestricted top-k.
                collect(false, &mut cands);
            }
            // Total order: affinity desc, then frame asc, then patch asc.
            cands.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            cands.truncate(cfg.top_k);

            // Softmax at temperature τ over the retained affinities.
            let inv_t = 1.0 / cfg.temperature;
            let max_a = cands
                .iter()
                .map(|c| c.0 as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut weights = Vec::with_capacity(cands.len());
            let mut denom = 0.0f64;
            for c in &cands {
                let w = ((c.0 as f64 - max_a) * inv_t).exp();
                weights.push(w);
                denom += w;
            }
            // Affinity-weighted vote; hard labels from already-propagated maps.
            let mut votes: Vec<(u32, f64)> = Vec::new();
            for (c, w) in cands.iter().zip(&weights) {
                let label = labels[c.1][c.2];
                match votes.iter_mut().find(|(l, _)| *l == label) {
                    Some((_, acc)) => *acc += w / denom,
                    None => votes.push((label, w / denom)),
                }
            }
            votes.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.0.cmp(&b.0))
            });
            frame_labels[q] = votes[0].0;
        }
        labels.push(frame_labels);
    }
    Ok(labels)
}

/// Mean per-frame patch accuracy of propagated labels against ground truth,
/// over frames 1..T (frame 0 is given).
pub fn patch_accuracy(predicted: &[Vec<u32>], truth: &[Vec<u32>]) -> f64 {
    assert_eq!(predicted.len(), truth.len());
    if predicted.len() <= 1 {
        return 1.0;
    }
    let mut acc = 0.0;
    for t in 1..predicted.len() {
        let hits = predicted[t]
            .iter()
            .zip(&truth[t])
            .filter(|(a, b)| a == b)
            .count();
        acc += hits as f64 / predicted[t].len() as f64;
    }
    acc / (predicted.len() - 1) as f64
}

/// Intersection-over-union of `label` between prediction and truth,
/// averaged over frames 1..T.
pub fn label_iou(predicted: &[Vec<u32>], truth: &[Vec<u32>], label: u32) -> f64 {
    let mut total = 0.0;
    let mut frames = 0;
    for t in 1..predicted.len() {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in predicted[t].iter().zip(&truth[t]) {
            let pa = *a == label;
            let pb = *b == label;
            if pa && pb {
                inter += 1;
            }
            if pa || pb {
                union += 1;
            }
        }
        if union > 0 {
            total += inter as f64 / union as f64;
            frames += 1;
        }
    }
    if frames == 0 {
        0.0
    } else {
        total / frames as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One-hot position-indicator features: patch p at every frame carries
    /// e_{source(p)}. Zero motion means source(p) = p.
    fn one_hot_volume(t: usize, hp: usize, wp: usize, source: impl Fn(usize, usize) -> usize) -> FeatureVolume {
        let n = hp * wp;
        let mut data = vec![0.0f32; t * n * n];
        for ti in 0..t {
            for p in 0..n {
                let src = source(ti, p);
                data[(ti * n + p) * n + src] = 1.0;
            }
        }
        FeatureVolume {
            t,
            n,
            d: n,
            h_patches: hp,
            w_patches: wp,
            data,
        }
    }

    #[test]
    fn zero_motion_copies_labels_every_frame() {
        let vol = one_hot_volume(6, 4, 4, |_, p| p);
        let labels: Vec<u32> = (0..16).map(|i| (i % 3) as u32).collect();
        let out = propagate_labels(&vol, &labels, &PropagationConfig::default()).unwrap();
        for frame in &out {
            assert_eq!(frame, &labels);
        }
    }

    #[test]
    fn top1_low_temperature_is_nearest_neighbor() {
        let vol = one_hot_volume(3, 2, 2, |_, p| p);
        let labels = vec![5, 6, 7, 8];
        let cfg = PropagationConfig {
            top_k: 1,
            temperature: 1e-3,
            ..PropagationConfig::default()
        };
        let out = propagate_labels(&vol, &labels, &cfg).unwrap();
        for frame in &out {
            assert_eq!(frame, &labels);
        }
    }

    #[test]
    fn output_labels_subset_of_input_labels() {
        // Random-ish features still only ever vote among given labels.
        let mut vol = one_hot_volume(4, 3, 3, |_, p| p);
        for (i, v) in vol.data.iter_mut().enumerate() {
            *v += ((i * 2654435761) % 97) as f32 / 970.0;
        }
        let labels = vec![2, 2, 9, 9, 2, 9, 2, 2, 9];
        let out = propagate_labels(&vol, &labels, &PropagationConfig::default()).unwrap();
        for frame in &out {
            for l in frame {
                assert!(*l == 2 || *l == 9, "invented label {l}");
            }
        }
    }

    #[test]
    fn propagation_is_deterministic() {
        let mut vol = one_hot_volume(5, 3, 3, |_, p| p);
        for (i, v) in vol.data.iter_mut().enumerate() {
            *v += ((i * 40503) % 89) as f32 / 890.0;
        }
        let labels = vec![0, 1, 2, 0, 1, 2, 0, 1, 2];
        let a = propagate_labels(&vol, &labels, &PropagationConfig::default()).unwrap();
        let b = propagate_labels(&vol, &labels, &PropagationConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn radius_fallback_keeps_propagation_alive() {
        // Radius 0 restricts to the same patch position; that candidate set
        // is non-empty, so shrink the grid to force the zero-candidate path
        // artificially via an empty context... not constructible. Instead
        // verify radius 0 still propagates using only same-position patches.
        let vol = one_hot_volume(3, 2, 2, |_, p| p);
        let labels = vec![1, 2, 3, 4];
        let cfg = PropagationConfig {
            search_radius: 0,
            ..PropagationConfig::default()
        };
        let out = propagate_labels(&vol, &labels, &cfg).unwrap();
        assert_eq!(out[2], labels);
    }

    #[test]
    fn translating_oracle_features_reproduce_truth_exactly() {
        // 4x4 grid translating one patch right per frame; features are
        // one-hot source indicators, labels are the distinct source indices.
        let (hp, wp, t) = (4usize, 4usize, 10usize);
        let n = hp * wp;
        let source = move |ti: usize, p: usize| -> usize {
            let (r, c) = (p / wp, p % wp);
            let sc = (c + wp - (ti % wp)) % wp;
            r * wp + sc
        };
        let vol = one_hot_volume(t, hp, wp, source);
        let labels: Vec<u32> = (0..n as u32).collect();
        let cfg = PropagationConfig::default(); // τ=0.7, k=7, radius 20
        let out = propagate_labels(&vol, &labels, &cfg).unwrap();
        for (ti, frame) in out.iter().enumerate() {
            for p in 0..n {
                assert_eq!(
                    frame[p],
                    source(ti, p) as u32,
                    "frame {ti} patch {p} mislabeled"
                );
            }
        }
    }

    #[test]
    fn accuracy_and_iou_metrics() {
        let pred = vec![vec![1, 0], vec![1, 0], vec![0, 0]];
        let truth = vec![vec![1, 0], vec![1, 0], vec![1, 0]];
        let acc = patch_accuracy(&pred, &truth);
        assert!((acc - 0.75).abs() < 1e-12);
        let iou = label_iou(&pred, &truth, 1);
        assert!((iou - 0.5).abs() < 1e-12); // frame1: 1/1, frame2: 0/1
    }
}
