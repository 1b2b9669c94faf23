// Calibration for the source-frame-count comparison: trains K=1 and K=2
// models over several seeds and prints held-out losses.
// Usage: calibrate_ablation [steps] [n_seeds]
use rvm_core::reference;
use rvm_core::trainer::{eval_loss, train};

fn main() {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(400);
    let n_seeds: u64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(5);
    let t0 = std::time::Instant::now();
    let mut medians = Vec::new();
    for k in [1usize, 2] {
        let mut losses = Vec::new();
        for seed in 0..n_seeds {
            let cfg = reference::moving_shape_ablation_train(seed, k, steps);
            let dir = std::env::temp_dir().join(format!("rvm_abl_{k}_{seed}"));
            let _ = std::fs::remove_dir_all(&dir);
            let out = train(&cfg, &dir, None, true).unwrap();
            let loss = eval_loss(&cfg, &out.checkpoint.weights).unwrap();
            println!("K={k} seed={seed}: held-out loss {loss:.5}");
            losses.push(loss);
            let _ = std::fs::remove_dir_all(&dir);
        }
        losses.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = losses[losses.len() / 2];
        println!("K={k} median: {median:.5}  (all: {losses:?})");
        medians.push(median);
    }
    println!(
        "K=2 {} K=1 ({:.5} vs {:.5}), total {:.1} min",
        if medians[1] < medians[0] { "beats" } else { "DOES NOT BEAT" },
        medians[1],
        medians[0],
        t0.elapsed().as_secs_f64() / 60.0
    );
}
