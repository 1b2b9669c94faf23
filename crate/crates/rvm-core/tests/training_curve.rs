//! Long-running training-behavior checks (minutes, single core).

use rvm_core::config::{CorpusEntry, TrainConfig};
use rvm_core::model::ModelConfig;
use rvm_core::trainer::{smoothed, train};
use rvm_core::video::SynthKind;

fn tmpdir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("rvm_curve_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

/// Training on a zero-motion corpus must reduce the loss below its starting
/// value: with static clips the task reduces to copying the source frame.
#[test]
fn zero_motion_training_reduces_loss() {
    let mut cfg = TrainConfig {
        model: ModelConfig {
            frame: 16,
            patch: 4,
            dim: 16,
            enc_layers: 1,
            enc_heads: 2,
            core_layers: 1,
            core_heads: 2,
            dec_dim: 16,
            dec_heads: 2,
            dec_blocks: 1,
            k_sources: 2,
            n_targets: 1,
            gap_min: 2,
            gap_max: 4,
            mask_ratio: 0.75,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    cfg.seed = 31;
    cfg.batch_size = 2;
    cfg.pool_size = 8;
    cfg.augment.enabled = false;
    cfg.opt.lr_peak = 3e-3;
    cfg.opt.warmup_steps = 10;
    cfg.opt.total_steps = 80;
    cfg.corpus = vec![CorpusEntry {
        kind: SynthKind::MovingShape,
        weight: 1.0,
        t: 8,
        square_size: 4,
        velocity: (0, 0),
    }];
    let dir = tmpdir("static");
    let out = train(&cfg, &dir, None, true).unwrap();
    let first = out.losses[0];
    let last_mean: f32 =
        out.losses[out.losses.len() - 10..].iter().sum::<f32>() / 10.0;
    assert!(
        last_mean < first,
        "loss did not decrease on static clips: {first} -> {last_mean}"
    );
    let _ = std::fs::remove_dir_all(&dir);
}

/// The documented moving-shape run: the window-100 smoothed loss decreases
/// strictly across training. A window-100 mean carries sampling noise of a
/// fraction of a percent, so the strict comparison runs at 400-step spacing
/// (wider than the window) together with an overall-decrease bound fixed by
/// the reference run; the run itself is bit-deterministic for this seed.
#[test]
fn moving_shape_smoothed_loss_strictly_decreasing() {
    let cfg = rvm_core::reference::moving_shape_curve_train();
    let dir = tmpdir("moving");
    eprintln!(
        "[training-curve] {} steps on the moving-shape corpus...",
        cfg.opt.total_steps
    );
    let out = train(&cfg, &dir, None, true).unwrap();
    let smooth = smoothed(&out.losses, 100);
    // smooth[i] is the mean of steps (i+1)..=(i+100); the value "at step k"
    // is smooth[k - 100].
    let at = |step: usize| smooth[step - 100];
    let checkpoints = [200usize, 600, 1000, 1400, 1800];
    let values: Vec<f32> = checkpoints.iter().map(|&s| at(s)).collect();
    for w in values.windows(2) {
        assert!(
            w[1] < w[0],
            "smoothed loss not strictly decreasing: {values:?}"
        );
    }
    let first = at(200);
    let last = at(2000);
    assert!(
        last < 0.5 * first,
        "no overall decrease: {first} -> {last}"
    );
    println!(
        "smoothed loss at checkpoints {checkpoints:?}: {:?}, step 2000: {:.4}",
        values
            .iter()
            .map(|v| (v * 1e4).round() / 1e4)
            .collect::<Vec<f32>>(),
        last
    );
    let _ = std::fs::remove_dir_all(&dir);
}
