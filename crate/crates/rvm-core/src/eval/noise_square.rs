//! The moving white-noise-square experiment: can the features "see" a
//! square that is invisible in any single frame?
//!
//! K-means (K=2) runs over the recurrent feature volume; per frame, the
//! cluster that best matches the square's ground-truth patches is scored by
//! IoU and the scores are averaged over frames 4..T (the first frames only
//! warm up the state). The same measurement on per-frame encoder features
//! is the image-model control — each frame alone is white noise, so those
//! features cannot beat chance no matter how trained.

use crate::error::Result;
use crate::eval::features::{frame_features, recurrent_features, FeatureVolume};
use crate::eval::viz::kmeans_maps;
use crate::model::{ModelConfig, ModelWeights};
use crate::tensor::Tensor;
use crate::video::{generate, CorrespondenceTruth, SynthSpec};

#[derive(Clone, Debug)]
pub struct NoiseSquareReport {
    /// Mean best-cluster IoU of K=2 clustering on recurrent features.
    pub recurrent_iou: f64,
    /// Same measurement on per-frame (non-recurrent) features.
    pub frame_iou: f64,
    /// Square-area fraction of the patch grid (the chance level).
    pub chance: f64,
}

/// Frames with index < this many are excluded from IoU averaging.
pub const WARMUP_FRAMES: usize = 3;

/// Per-frame best-matching-cluster IoU against binary truth, averaged over
/// frames `WARMUP_FRAMES..T`.
pub fn best_cluster_iou(maps: &[Vec<u32>], truth: &CorrespondenceTruth, k: usize) -> f64 {
    let mut total = 0.0;
    let mut frames = 0usize;
    for (t, map) in maps.iter().enumerate().skip(WARMUP_FRAMES) {
        let truth_map = truth.frame(t);
        let mut best = 0.0f64;
        for cluster in 0..k as u32 {
            let mut inter = 0usize;
            let mut union = 0usize;
            for (c, &label) in map.iter().zip(truth_map) {
                let in_cluster = *c == cluster;
                let in_square = label == 1;
                if in_cluster && in_square {
                    inter += 1;
                }
                if in_cluster || in_square {
                    union += 1;
                }
            }
            if union > 0 {
                best = best.max(inter as f64 / union as f64);
            }
        }
        total += best;
        frames += 1;
    }
    if frames == 0 {
        0.0
    } else {
        total / frames as f64
    }
}

fn mean_square_fraction(truth: &CorrespondenceTruth) -> f64 {
    let mut covered = 0usize;
    let mut total = 0usize;
    for frame in &truth.labels {
        covered += frame.iter().filter(|&&l| l == 1).count();
        total += frame.len();
    }
    covered as f64 / total as f64
}

/// Run the experiment on one clip with the given weights.
pub fn noise_square_experiment(
    weights: &ModelWeights<Tensor<f32>>,
    cfg: &ModelConfig,
    spec: &SynthSpec,
    kmeans_seed: u64,
) -> Result<NoiseSquareReport> {
    let (clip, truth) = generate(spec)?;
    let recurrent = recurrent_features(&clip, weights, cfg);
    let frames = frame_features(&clip, weights, cfg);
    Ok(report_from_features(&recurrent, &frames, &truth, kmeans_seed))
}

/// Score precomputed feature volumes (lets callers reuse extractions).
pub fn report_from_features(
    recurrent: &FeatureVolume,
    per_frame: &FeatureVolume,
    truth: &CorrespondenceTruth,
    kmeans_seed: u64,
) -> NoiseSquareReport {
    let rec_maps = kmeans_maps(recurrent, 2, kmeans_seed);
    let frm_maps = kmeans_maps(per_frame, 2, kmeans_seed);
    NoiseSquareReport {
        recurrent_iou: best_cluster_iou(&rec_maps, truth, 2),
        frame_iou: best_cluster_iou(&frm_maps, truth, 2),
        chance: mean_square_fraction(truth),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::SynthKind;

    fn spec() -> SynthSpec {
        SynthSpec {
            kind: SynthKind::NoiseSquare,
            t: 16,
            h: 32,
            w: 32,
            square_size: 8,
            velocity: (0, 4),
            seed: 21,
            truth_patch: 4,
        }
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            frame: 32,
            patch: 4,
            dim: 8,
            enc_layers: 1,
            enc_heads: 2,
            core_layers: 1,
            core_heads: 2,
            dec_dim: 8,
            dec_heads: 2,
            dec_blocks: 1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn untrained_weights_score_near_chance() {
        let cfg = tiny_cfg();
        let weights = ModelWeights::<Tensor<f32>>::init(&cfg, 5);
        let report = noise_square_experiment(&weights, &cfg, &spec(), 3).unwrap();
        assert!(report.chance > 0.0 && report.chance < 0.2);
        assert!(
            report.frame_iou <= report.chance + 0.15,
            "untrained per-frame IoU {:.3} too far above chance {:.3}",
            report.frame_iou,
            report.chance
        );
        assert!(
            report.recurrent_iou <= report.chance + 0.2,
            "untrained recurrent IoU {:.3} unexpectedly high",
            report.recurrent_iou
        );
    }

    #[test]
    fn perfect_feature_oracle_reaches_full_iou() {
        // Features that literally encode the truth label must give IoU 1.
        let (_, truth) = generate(&spec()).unwrap();
        let n = truth.h_patches * truth.w_patches;
        let t = truth.labels.len();
        let mut data = Vec::with_capacity(t * n * 2);
        for frame in &truth.labels {
            for &l in frame {
                data.push(l as f32 * 10.0);
                data.push(1.0 - l as f32 * 10.0);
            }
        }
        let vol = FeatureVolume {
            t,
            n,
            d: 2,
            h_patches: truth.h_patches,
            w_patches: truth.w_patches,
            data,
        };
        let maps = kmeans_maps(&vol, 2, 9);
        let iou = best_cluster_iou(&maps, &truth, 2);
        assert!((iou - 1.0).abs() < 1e-12, "oracle IoU {iou}");
    }
}
