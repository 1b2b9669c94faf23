//! Cost benchmark: analytic FLOPs plus measured wall time per aggregator
//! and unroll length.

use crate::error::Result;
use crate::eval::features::{
    recurrent_features, self_attention_features, AggregatorKind, SelfAttentionAggregator,
};
use crate::eval::flops::CostModel;
use crate::model::{ModelConfig, ModelWeights};
use crate::tensor::Tensor;
use crate::video::{generate, SynthKind, SynthSpec, VideoClip};
use std::time::Instant;

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub kind: AggregatorKind,
    pub t: usize,
    pub flops: u64,
    pub wall_ms_median: f64,
}

pub const BENCH_CSV_HEADER: &str = "kind,T,flops,wall_ms_median";

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:.3}\n",
            r.kind.name(),
            r.t,
            r.flops,
            r.wall_ms_median
        ));
    }
    s
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn bench_clip(cfg: &ModelConfig, t: usize) -> Result<VideoClip> {
    let spec = SynthSpec {
        kind: SynthKind::NoiseSquare,
        t,
        h: cfg.frame,
        w: cfg.frame,
        square_size: (cfg.frame / 4).max(cfg.patch),
        velocity: (0, cfg.patch as i64),
        seed: 0xBE7C,
        truth_patch: cfg.patch,
    };
    Ok(generate(&spec)?.0)
}

/// Analytic FLOPs and median wall time over `runs` timed repetitions for
/// each unroll length. Timing runs single-threaded.
pub fn cost_benchmark(
    weights: &ModelWeights<Tensor<f32>>,
    cfg: &ModelConfig,
    kind: AggregatorKind,
    t_values: &[usize],
    runs: usize,
) -> Result<Vec<BenchRow>> {
    let model = CostModel::new(cfg);
    let aggregator = match kind {
        AggregatorKind::FullSelfAttention => Some(SelfAttentionAggregator::init(cfg, 0xA66)),
        AggregatorKind::Recurrent => None,
    };
    let runs = runs.max(5);
    let mut rows = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let clip = bench_clip(cfg, t)?;
        // One untimed warmup.
        let _ = run_once(&clip, weights, cfg, kind, aggregator.as_ref());
        let mut times = Vec::with_capacity(runs);
        for _ in 0..runs {
            let started = Instant::now();
            let vol = run_once(&clip, weights, cfg, kind, aggregator.as_ref());
            times.push(started.elapsed().as_secs_f64() * 1e3);
            assert!(vol.all_finite());
        }
        let flops = match kind {
            AggregatorKind::Recurrent => model.recurrent_forward(t as u64),
            AggregatorKind::FullSelfAttention => model.self_attention_forward(t as u64),
        };
        rows.push(BenchRow {
            kind,
            t,
            flops,
            wall_ms_median: median(times),
        });
    }
    Ok(rows)
}

fn run_once(
    clip: &VideoClip,
    weights: &ModelWeights<Tensor<f32>>,
    cfg: &ModelConfig,
    kind: AggregatorKind,
    aggregator: Option<&SelfAttentionAggregator>,
) -> crate::eval::features::FeatureVolume {
    match kind {
        AggregatorKind::Recurrent => recurrent_features(clip, weights, cfg),
        AggregatorKind::FullSelfAttention => {
            self_attention_features(clip, weights, aggregator.expect("aggregator"), cfg)
        }
    }
}

/// Least-squares residual of fitting `y = a + b·t`; exact-linear data gives
/// zero (used to check the analytic recurrent cost).
pub fn linear_fit_residual(ts: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(ts.len(), ys.len());
    let n = ts.len() as f64;
    let st: f64 = ts.iter().sum();
    let sy: f64 = ys.iter().sum();
    let stt: f64 = ts.iter().map(|t| t * t).sum();
    let sty: f64 = ts.iter().zip(ys).map(|(t, y)| t * y).sum();
    let denom = n * stt - st * st;
    if denom.abs() < 1e-30 {
        return f64::INFINITY;
    }
    let b = (n * sty - st * sy) / denom;
    let a = (sy - b * st) / n;
    ys.iter()
        .zip(ts)
        .map(|(y, t)| {
            let r = y - (a + b * t);
            r * r
        })
        .sum()
}
