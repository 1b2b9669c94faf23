// Calibration harness for the reference thresholds: trains a candidate
// config on the noise-square corpus and reports clustering IoU on held-out
// clips. Usage: calibrate <steps> [dotted overrides...]
use rvm_core::eval::noise_square::noise_square_experiment;
use rvm_core::reference;

fn main() {
    let mut cfg = reference::tiny_noise_square_train();
    let mut args = std::env::args().skip(1);
    if let Some(steps) = args.next() {
        cfg.opt.total_steps = steps.parse().unwrap();
    }
    while let Some(key) = args.next() {
        let value = args.next().expect("override value");
        cfg.apply(&key, &value).unwrap();
    }
    cfg.model.validate().unwrap();
    let dir = std::env::temp_dir().join(format!("rvm_calibrate_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let t0 = std::time::Instant::now();
    let out = rvm_core::trainer::train(&cfg, &dir, None, true).unwrap();
    eprintln!(
        "trained {} steps in {:.1} min",
        cfg.opt.total_steps,
        t0.elapsed().as_secs_f64() / 60.0
    );
    let w = &out.checkpoint.weights;
    for seed in [1001u64, 2002, 3003] {
        let spec = reference::noise_square_eval_spec_for(&cfg.model, seed);
        let report = noise_square_experiment(w, &cfg.model, &spec, 99).unwrap();
        println!(
            "seed {seed}: recurrent IoU {:.3}, per-frame IoU {:.3}, chance {:.3}",
            report.recurrent_iou, report.frame_iou, report.chance
        );
    }
    let held_out = rvm_core::trainer::eval_loss(&cfg, w).unwrap();
    println!("held-out loss: {held_out:.5}");
}
