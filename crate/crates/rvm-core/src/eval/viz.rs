//! Feature visualizations: top-3 principal components mapped to RGB, and
//! k-means cluster maps with a fixed palette.
//!
//! Both operate on the tokens of the whole volume at once (all frames, all
//! positions), so colors and cluster identities are consistent across
//! frames by construction.

use crate::error::{Error, Result};
use crate::eval::features::FeatureVolume;
use crate::rng::Rng;

/// Top `k` principal components of the mean-centered token matrix via
/// power iteration with deflation. Components with negligible variance are
/// returned as zero vectors. Each component's sign is normalized so its
/// largest-magnitude loading is positive.
pub fn principal_components(data: &[f32], rows: usize, d: usize, k: usize) -> Vec<Vec<f64>> {
    assert_eq!(data.len(), rows * d);
    // Mean-center into f64.
    let mut mean = vec![0.0f64; d];
    for r in 0..rows {
        for j in 0..d {
            mean[j] += data[r * d + j] as f64;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut x: Vec<f64> = Vec::with_capacity(rows * d);
    for r in 0..rows {
        for j in 0..d {
            x.push(data[r * d + j] as f64 - mean[j]);
        }
    }

    let total_var: f64 = x.iter().map(|v| v * v).sum();
    let mut components = Vec::with_capacity(k);
    let mut rng = Rng::new(0x9C0);
    for _ in 0..k {
        // Power iteration on X^T X.
        let mut v: Vec<f64> = (0..d).map(|_| rng.uniform() - 0.5).collect();
        normalize(&mut v);
        let mut eigenvalue = 0.0f64;
        for _ in 0..200 {
            // w = X^T (X v)
            let mut xv = vec![0.0f64; rows];
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                xv[r] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            let mut w = vec![0.0f64; d];
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                for j in 0..d {
                    w[j] += row[j] * xv[r];
                }
            }
            let norm = normalize(&mut w);
            let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = w;
            eigenvalue = norm;
            if delta < 1e-12 {
                break;
            }
        }
        if !eigenvalue.is_finite() || eigenvalue <= total_var * 1e-12 + 1e-30 {
            components.push(vec![0.0; d]);
            continue;
        }
        // Sign convention: largest-magnitude loading positive.
        let mut arg = 0;
        for j in 1..d {
            if v[j].abs() > v[arg].abs() {
                arg = j;
            }
        }
        if v[arg] < 0.0 {
            for c in &mut v {
                *c = -*c;
            }
        }
        // Deflate: X <- X - (X v) v^T.
        for r in 0..rows {
            let row = &mut x[r * d..(r + 1) * d];
            let proj: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            for j in 0..d {
                row[j] -= proj * v[j];
            }
        }
        components.push(v);
    }
    components
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// Project the volume onto its top three principal components and min-max
/// normalize each component over the whole volume: per-frame RGB maps at
/// patch resolution, values in [0,1].
pub fn pca3_maps(features: &FeatureVolume) -> Vec<Vec<f32>> {
    let rows = features.t * features.n;
    let comps = principal_components(&features.data, rows, features.d, 3);
    // Scores per token per component.
    let mut scores = vec![0.0f64; rows * 3];
    // Mean for centering (principal_components centered internally; redo here).
    let mut mean = vec![0.0f64; features.d];
    for r in 0..rows {
        for j in 0..features.d {
            mean[j] += features.data[r * features.d + j] as f64;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    for r in 0..rows {
        for (ci, comp) in comps.iter().enumerate() {
            let mut s = 0.0;
            for j in 0..features.d {
                s += (features.data[r * features.d + j] as f64 - mean[j]) * comp[j];
            }
            scores[r * 3 + ci] = s;
        }
    }
    // Sign convention at the projection level: the largest-magnitude score
    // of each component is made positive, so negating every feature leaves
    // the rendered maps unchanged.
    for c in 0..3 {
        let mut arg = 0;
        for r in 1..rows {
            if scores[r * 3 + c].abs() > scores[arg * 3 + c].abs() {
                arg = r;
            }
        }
        if scores[arg * 3 + c] < 0.0 {
            for r in 0..rows {
                scores[r * 3 + c] = -scores[r * 3 + c];
            }
        }
    }
    // Min-max per component across the whole volume.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for r in 0..rows {
        for c in 0..3 {
            lo[c] = lo[c].min(scores[r * 3 + c]);
            hi[c] = hi[c].max(scores[r * 3 + c]);
        }
    }
    let mut frames = Vec::with_capacity(features.t);
    for t in 0..features.t {
        let mut rgb = Vec::with_capacity(features.n * 3);
        for p in 0..features.n {
            let r = t * features.n + p;
            for c in 0..3 {
                let span = hi[c] - lo[c];
                let v = if span > 1e-30 {
                    (scores[r * 3 + c] - lo[c]) / span
                } else {
                    0.0
                };
                rgb.push(v as f32);
            }
        }
        frames.push(rgb);
    }
    frames
}

/// Lloyd k-means with k-means++ seeding over all tokens of the volume.
#[derive(Clone, Debug)]
pub struct KMeans {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Within-cluster sum of squares per Lloyd iteration.
    pub objective_history: Vec<f64>,
}

pub fn kmeans(data: &[f32], rows: usize, d: usize, k: usize, seed: u64) -> KMeans {
    assert!(k >= 1 && rows >= k, "need at least {k} rows, got {rows}");
    let row = |r: usize| -> &[f32] { &data[r * d..(r + 1) * d] };
    let dist2 = |a: &[f32], c: &[f64]| -> f64 {
        a.iter()
            .zip(c)
            .map(|(x, m)| (*x as f64 - m) * (*x as f64 - m))
            .sum()
    };
    let mut rng = Rng::stream(seed, &[0x6B]);

    // k-means++ seeding.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.below(rows as u64) as usize;
    centers.push(row(first).iter().map(|&v| v as f64).collect());
    let mut d2: Vec<f64> = (0..rows).map(|r| dist2(row(r), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // Degenerate data: every point equals the first center.
            rng.below(rows as u64) as usize
        } else {
            let mut pick = rng.uniform() * total;
            let mut chosen = rows - 1;
            for (r, &w) in d2.iter().enumerate() {
                if pick < w {
                    chosen = r;
                    break;
                }
                pick -= w;
            }
            chosen
        };
        centers.push(row(next).iter().map(|&v| v as f64).collect());
        for r in 0..rows {
            d2[r] = d2[r].min(dist2(row(r), centers.last().unwrap()));
        }
    }

    // Lloyd iterations.
    let mut assignments = vec![0usize; rows];
    let mut history = Vec::new();
    let mut prev_obj = f64::INFINITY;
    for _ in 0..100 {
        let mut objective = 0.0;
        for r in 0..rows {
            let mut best = (0usize, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let dd = dist2(row(r), center);
                if dd < best.1 {
                    best = (c, dd);
                }
            }
            assignments[r] = best.0;
            objective += best.1;
        }
        history.push(objective);
        if (prev_obj - objective).abs() < 1e-6 {
            break;
        }
        prev_obj = objective;
        // Update step; empty clusters keep their center.
        let mut sums = vec![vec![0.0f64; d]; k];
        let mut counts = vec![0usize; k];
        for r in 0..rows {
            let c = assignments[r];
            counts[c] += 1;
            for j in 0..d {
                sums[c][j] += data[r * d + j] as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centers[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
    }
    KMeans {
        k,
        assignments,
        centers,
        objective_history: history,
    }
}

/// Cluster the whole volume once; per-frame cluster-id maps.
pub fn kmeans_maps(features: &FeatureVolume, k: usize, seed: u64) -> Vec<Vec<u32>> {
    let rows = features.t * features.n;
    let km = kmeans(&features.data, rows, features.d, k, seed);
    (0..features.t)
        .map(|t| {
            (0..features.n)
                .map(|p| km.assignments[t * features.n + p] as u32)
                .collect()
        })
        .collect()
}

/// Fixed palette: distinct colors per cluster id, stable across frames.
pub fn palette_color(cluster: u32) -> [f32; 3] {
    const PALETTE: [[f32; 3]; 10] = [
        [0.906, 0.298, 0.235],
        [0.204, 0.596, 0.859],
        [0.180, 0.800, 0.443],
        [0.945, 0.769, 0.059],
        [0.608, 0.349, 0.714],
        [0.902, 0.494, 0.133],
        [0.102, 0.737, 0.612],
        [0.906, 0.435, 0.718],
        [0.498, 0.549, 0.553],
        [0.949, 0.949, 0.949],
    ];
    PALETTE[(cluster as usize) % PALETTE.len()]
}

/// Render a patch-resolution RGB map to pixel scale (each patch becomes a
/// `scale`×`scale` block), as flat H×W×3 data for PPM export.
pub fn upscale_rgb(rgb: &[f32], hp: usize, wp: usize, scale: usize) -> (usize, usize, Vec<f32>) {
    let (h, w) = (hp * scale, wp * scale);
    let mut out = vec![0.0f32; h * w * 3];
    for pr in 0..hp {
        for pc in 0..wp {
            let src = (pr * wp + pc) * 3;
            for dy in 0..scale {
                for dx in 0..scale {
                    let dst = ((pr * scale + dy) * w + pc * scale + dx) * 3;
                    out[dst..dst + 3].copy_from_slice(&rgb[src..src + 3]);
                }
            }
        }
    }
    (h, w, out)
}

/// Cluster map rendered through the palette, upscaled for viewing.
pub fn render_clusters(map: &[u32], hp: usize, wp: usize, scale: usize) -> (usize, usize, Vec<f32>) {
    let rgb: Vec<f32> = map.iter().flat_map(|&c| palette_color(c)).collect();
    upscale_rgb(&rgb, hp, wp, scale)
}

/// Per-frame propagation metric normalized to its first (shortest-horizon)
/// value. Errors if the baseline is zero.
pub fn stability_curve(values: &[f64]) -> Result<Vec<f64>> {
    let first = *values
        .first()
        .ok_or_else(|| Error::Eval("empty stability input".into()))?;
    if first == 0.0 {
        return Err(Error::Eval("zero baseline at the shortest horizon".into()));
    }
    Ok(values.iter().map(|v| v / first).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume(t: usize, n: usize, d: usize, data: Vec<f32>) -> FeatureVolume {
        FeatureVolume {
            t,
            n,
            d,
            h_patches: 1,
            w_patches: n,
            data,
        }
    }

    #[test]
    fn constant_features_give_all_zero_pca_and_one_cluster() {
        let vol = volume(2, 4, 3, vec![0.7; 2 * 4 * 3]);
        let maps = pca3_maps(&vol);
        for frame in &maps {
            assert!(frame.iter().all(|&v| v == 0.0));
        }
        let clusters = kmeans_maps(&vol, 2, 1);
        let first = clusters[0][0];
        for frame in &clusters {
            assert!(frame.iter().all(|&c| c == first), "multiple effective clusters");
        }
    }

    #[test]
    fn two_separated_blobs_recovered_exactly() {
        // 40 points around (0,...) and 40 around (10,...), K=2.
        let d = 4;
        let mut data = Vec::new();
        let mut rng = Rng::new(3);
        for i in 0..80 {
            let base = if i < 40 { 0.0 } else { 10.0 };
            for _ in 0..d {
                data.push(base + rng.uniform() as f32 * 0.5);
            }
        }
        let km = kmeans(&data, 80, d, 2, 7);
        let first = km.assignments[0];
        assert!(km.assignments[..40].iter().all(|&a| a == first));
        assert!(km.assignments[40..].iter().all(|&a| a != first));
    }

    #[test]
    fn kmeans_objective_never_increases() {
        let mut rng = Rng::new(9);
        let rows = 200;
        let d = 6;
        let data: Vec<f32> = (0..rows * d).map(|_| rng.uniform() as f32).collect();
        let km = kmeans(&data, rows, d, 5, 11);
        for w in km.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "objective rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn cluster_ids_consistent_across_frames_for_static_features() {
        let mut rng = Rng::new(13);
        let n = 9;
        let d = 5;
        let one_frame: Vec<f32> = (0..n * d).map(|_| rng.uniform() as f32).collect();
        let mut data = one_frame.clone();
        data.extend_from_slice(&one_frame);
        data.extend_from_slice(&one_frame);
        let vol = volume(3, n, d, data);
        let maps = kmeans_maps(&vol, 3, 17);
        assert_eq!(maps[0], maps[1]);
        assert_eq!(maps[1], maps[2]);
    }

    #[test]
    fn pca_sign_flip_invariance_after_normalization() {
        let mut rng = Rng::new(15);
        let vol_data: Vec<f32> = (0..2 * 8 * 6).map(|_| rng.uniform() as f32).collect();
        let vol = volume(2, 8, 6, vol_data.clone());
        let flipped = volume(2, 8, 6, vol_data.iter().map(|v| -v).collect());
        let a = pca3_maps(&vol);
        let b = pca3_maps(&flipped);
        // Negating every feature flips component loadings; the sign
        // convention plus min-max rescaling makes the rendered maps equal.
        for (fa, fb) in a.iter().zip(&b) {
            for (x, y) in fa.iter().zip(fb) {
                assert!((x - y).abs() < 1e-5, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn rank_deficient_volume_pads_with_zero_components() {
        // Rank-1 data: only the first component survives.
        let n = 6;
        let d = 4;
        let dir = [1.0f32, 2.0, -1.0, 0.5];
        let mut data = Vec::new();
        for i in 0..n {
            for v in dir {
                data.push(v * i as f32);
            }
        }
        let comps = principal_components(&data, n, d, 3);
        assert!(comps[0].iter().any(|&v| v != 0.0));
        assert!(comps[1].iter().all(|&v| v == 0.0));
        assert!(comps[2].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stability_curve_normalizes_to_first() {
        let curve = stability_curve(&[0.8, 0.8, 0.6, 0.4]).unwrap();
        assert_eq!(curve[0], 1.0);
        assert!((curve[2] - 0.75).abs() < 1e-12);
        // Constant input → all ones.
        let flat = stability_curve(&[0.5, 0.5, 0.5]).unwrap();
        assert!(flat.iter().all(|&v| v == 1.0));
        // Monotone decreasing input → monotone decreasing curve.
        let dec = stability_curve(&[1.0, 0.9, 0.7, 0.2]).unwrap();
        assert!(dec.windows(2).all(|w| w[1] < w[0]));
        // Zero baseline is an error.
        assert!(stability_curve(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn upscale_repeats_patch_blocks() {
        let rgb = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]; // two patches
        let (h, w, px) = upscale_rgb(&rgb, 1, 2, 2);
        assert_eq!((h, w), (2, 4));
        // Top-left block red.
        assert_eq!(&px[0..3], &[1.0, 0.0, 0.0]);
        // Top-right block green.
        assert_eq!(&px[(2 * 3)..(2 * 3 + 3)], &[0.0, 1.0, 0.0]);
    }
}
