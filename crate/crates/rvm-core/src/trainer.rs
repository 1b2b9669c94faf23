//! The training loop: sampling, forward/backward through time, AdamW, and
//! checkpointing.
//!
//! Every random decision is a pure function of (seed, step, sample index) —
//! not of worker scheduling or draw order — so training is bit-reproducible
//! for a fixed seed at any worker count, and resuming from a checkpoint
//! continues the identical trajectory.

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{forward_loss, ModelWeights};
use crate::optim::AdamW;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::video::{augment, generate, sample_training_clip, AugmentConfig, TrainSample};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

// Stream tags for derived randomness.
const TAG_SAMPLE: u64 = 1;
const TAG_MASK: u64 = 2;
const TAG_CLIP: u64 = 3;
const TAG_EVAL: u64 = 4;
const TAG_EVAL_CLIP: u64 = 5;

pub const METRICS_HEADER: &str = "step,loss,lr,grad_norm,wall_ms";

/// Draw one training sample for (step, index). Exposed for the consistency
/// tests on the sampling pipeline.
pub fn draw_sample(cfg: &TrainConfig, step: u64, index: u64) -> Result<TrainSample> {
    let mut rng = Rng::stream(cfg.seed, &[TAG_SAMPLE, step, index]);
    draw_with(cfg, &mut rng, TAG_CLIP)
}

/// Draw one held-out sample (clip pool disjoint from training).
pub fn draw_eval_sample(cfg: &TrainConfig, index: u64) -> Result<TrainSample> {
    let mut rng = Rng::stream(cfg.seed, &[TAG_EVAL, index]);
    draw_with(cfg, &mut rng, TAG_EVAL_CLIP)
}

fn draw_with(cfg: &TrainConfig, rng: &mut Rng, clip_tag: u64) -> Result<TrainSample> {
    // Mixture entry by weight.
    let total: f64 = cfg.corpus.iter().map(|c| c.weight).sum();
    if total <= 0.0 {
        return Err(Error::Sampling("corpus weights sum to zero".into()));
    }
    let mut pick = rng.uniform() * total;
    let mut entry_idx = cfg.corpus.len() - 1;
    for (i, c) in cfg.corpus.iter().enumerate() {
        if pick < c.weight {
            entry_idx = i;
            break;
        }
        pick -= c.weight;
    }
    let pool_idx = rng.below(cfg.pool_size.max(1) as u64);
    let clip_seed = Rng::stream(cfg.seed, &[clip_tag, entry_idx as u64, pool_idx]).next_u64();
    let spec = cfg.corpus[entry_idx].spec(&cfg.model, clip_seed);
    let (clip, _) = generate(&spec)?;
    let clip = if cfg.augment.enabled {
        let acfg = AugmentConfig {
            flip_p: cfg.augment.flip_p,
            scale: cfg.augment.scale,
            aspect: cfg.augment.aspect,
            out_h: cfg.model.frame,
            out_w: cfg.model.frame,
        };
        augment(&clip, &acfg, rng)
    } else {
        clip
    };
    sample_training_clip(&clip, &cfg.model.sampling(), rng)
}

/// Loss and per-parameter gradients for one sample, on its own tape.
fn sample_grads(
    cfg: &TrainConfig,
    weights: &ModelWeights<Tensor<f32>>,
    sample: &TrainSample,
    mask_rng: &mut Rng,
) -> Result<(f32, Vec<Vec<f32>>)> {
    let mut tape = Tape::<f32>::new();
    let staged = weights.stage(&mut tape);
    let targets: Vec<(Tensor<f32>, usize)> = sample
        .targets
        .iter()
        .map(|(f, g)| (f.clone(), *g))
        .collect();
    let loss = forward_loss(
        &mut tape,
        &staged,
        &cfg.model,
        &sample.sources,
        &targets,
        mask_rng,
    )?;
    let loss_val = tape.data_of(loss)[0];
    tape.backward(loss)?;
    let mut grads = Vec::new();
    staged.visit(&mut |_, v| {
        grads.push(tape.grad(*v).expect("leaf grad").to_vec());
    });
    Ok((loss_val, grads))
}

/// Per-step result of the batch pass.
struct BatchResult {
    mean_loss: f32,
    /// Summed gradients in registry order (divided by batch size later).
    grads: Vec<Vec<f32>>,
}

fn run_batch(
    cfg: &TrainConfig,
    weights: &ModelWeights<Tensor<f32>>,
    step: u64,
) -> Result<BatchResult> {
    let b = cfg.batch_size;
    let workers = cfg.workers.max(1).min(b);
    let mut per_sample: Vec<Option<(f32, Vec<Vec<f32>>)>> = (0..b).map(|_| None).collect();

    if workers <= 1 {
        for (i, slot) in per_sample.iter_mut().enumerate() {
            let sample = draw_sample(cfg, step, i as u64)?;
            let mut mask_rng = Rng::stream(cfg.seed, &[TAG_MASK, step, i as u64]);
            *slot = Some(sample_grads(cfg, weights, &sample, &mut mask_rng)?);
        }
    } else {
        // Fan out across sample indices; results are merged in index order,
        // so scheduling cannot change the reduction.
        let results: Vec<Result<Vec<(usize, (f32, Vec<Vec<f32>>))>>> =
            std::thread::scope(|scope| {
                let mut handles = Vec::new();
                for w in 0..workers {
                    let cfg = &*cfg;
                    let weights = &*weights;
                    handles.push(scope.spawn(move || {
                        let mut out = Vec::new();
                        let mut i = w;
                        while i < b {
                            let sample = draw_sample(cfg, step, i as u64)?;
                            let mut mask_rng =
                                Rng::stream(cfg.seed, &[TAG_MASK, step, i as u64]);
                            out.push((i, sample_grads(cfg, weights, &sample, &mut mask_rng)?));
                            i += workers;
                        }
                        Ok(out)
                    }));
                }
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
        for r in results {
            for (i, v) in r? {
                per_sample[i] = Some(v);
            }
        }
    }

    // Fixed-order sequential reduction over sample index.
    let mut mean_loss = 0.0f32;
    let mut grads: Option<Vec<Vec<f32>>> = None;
    for slot in per_sample {
        let (loss, g) = slot.expect("sample computed");
        mean_loss += loss;
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
            }
        }
    }
    Ok(BatchResult {
        mean_loss: mean_loss / b as f32,
        grads: grads.expect("non-empty batch"),
    })
}

/// Output of a training run.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics_path: PathBuf,
    pub final_checkpoint_path: PathBuf,
    pub losses: Vec<f32>,
}

fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("ckpt_{step:07}.rvmc"))
}

fn guard_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Contract(format!(
            "refusing to overwrite {} (use force)",
            path.display()
        )));
    }
    Ok(())
}

/// Run training per config, writing metrics and checkpoints into `out_dir`.
///
/// `resume` continues from a checkpoint's step with its weights and
/// optimizer moments; the trajectory is bit-identical to an uninterrupted
/// run because all sampling derives from (seed, step, index).
pub fn train(
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: Option<Checkpoint>,
    force: bool,
) -> Result<TrainOutcome> {
    cfg.model.validate()?;
    fs::create_dir_all(out_dir)?;

    let (mut weights, mut opt, start_step) = match resume {
        Some(ckpt) => {
            let mut opt = AdamW::new(cfg.opt.clone(), &ckpt.weights);
            opt.moments = ckpt.moments;
            opt.steps_done = ckpt.step;
            (ckpt.weights, opt, ckpt.step)
        }
        None => {
            let weights = ModelWeights::<Tensor<f32>>::init(&cfg.model, cfg.seed);
            let opt = AdamW::new(cfg.opt.clone(), &weights);
            (weights, opt, 0)
        }
    };

    let final_path = out_dir.join("ckpt_final.rvmc");
    guard_overwrite(&final_path, force)?;

    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = fs::File::create(&metrics_path)?;
    writeln!(metrics, "{METRICS_HEADER}")?;

    let total = cfg.opt.total_steps as u64;
    let progress_every = (total / 20).max(1);
    let mut losses = Vec::new();

    for step in (start_step + 1)..=total {
        let started = Instant::now();
        let batch = run_batch(cfg, &weights, step)?;
        if !batch.mean_loss.is_finite() {
            let dump = out_dir.join("diagnostics.txt");
            let mut f = fs::File::create(&dump)?;
            writeln!(f, "non-finite loss at step {step}")?;
            writeln!(f, "seed {} batch_size {}", cfg.seed, cfg.batch_size)?;
            for i in 0..cfg.batch_size {
                writeln!(f, "sample {i}: stream ({}, sample, {step}, {i})", cfg.seed)?;
            }
            return Err(Error::NonFinite(format!(
                "loss at step {step}; diagnostics in {}",
                dump.display()
            )));
        }
        // Average gradients over the batch and hand them to the optimizer.
        let scale = 1.0 / cfg.batch_size as f32;
        let mut idx = 0;
        weights.visit_mut(&mut |_, t| {
            let g: Vec<f32> = batch.grads[idx].iter().map(|v| v * scale).collect();
            t.zero_grad();
            t.accumulate_grad(&g);
            idx += 1;
        });
        let (lr, grad_norm) = opt.step(&mut weights);
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        writeln!(
            metrics,
            "{step},{:.6e},{:.6e},{:.6e},{:.3}",
            batch.mean_loss, lr, grad_norm, wall_ms
        )?;
        losses.push(batch.mean_loss);

        if step % progress_every == 0 || step == total {
            eprintln!(
                "step {step}/{total} loss {:.5} lr {:.2e} |g| {:.3}",
                batch.mean_loss, lr, grad_norm
            );
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every as u64 == 0 && step != total {
            let path = checkpoint_path(out_dir, step);
            guard_overwrite(&path, force)?;
            let ckpt = Checkpoint::new(
                step,
                weights.clone(),
                opt.moments.clone(),
                Rng::stream(cfg.seed, &[step]).state(),
            );
            ckpt.save(&path)?;
        }
    }

    let final_ckpt = Checkpoint::new(
        opt.steps_done,
        weights,
        opt.moments,
        Rng::stream(cfg.seed, &[opt.steps_done]).state(),
    );
    final_ckpt.save(&final_path)?;
    Ok(TrainOutcome {
        checkpoint: final_ckpt,
        metrics_path,
        final_checkpoint_path: final_path,
        losses,
    })
}

/// Mean reconstruction loss over the held-out sample set (no parameter
/// updates, masking from dedicated eval streams).
pub fn eval_loss(cfg: &TrainConfig, weights: &ModelWeights<Tensor<f32>>) -> Result<f32> {
    let n = cfg.eval_samples.max(1);
    let mut total = 0.0f64;
    for i in 0..n {
        let sample = draw_eval_sample(cfg, i as u64)?;
        let mut mask_rng = Rng::stream(cfg.seed, &[TAG_EVAL, TAG_MASK, i as u64]);
        let mut tape = Tape::<f32>::new();
        let staged = weights.stage(&mut tape);
        let targets: Vec<(Tensor<f32>, usize)> = sample
            .targets
            .iter()
            .map(|(f, g)| (f.clone(), *g))
            .collect();
        let loss = forward_loss(
            &mut tape,
            &staged,
            &cfg.model,
            &sample.sources,
            &targets,
            &mut mask_rng,
        )?;
        total += tape.data_of(loss)[0] as f64;
    }
    Ok((total / n as f64) as f32)
}

/// Smoothed (windowed mean) loss curve, for trend assertions.
pub fn smoothed(losses: &[f32], window: usize) -> Vec<f32> {
    if losses.len() < window || window == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(losses.len() - window + 1);
    let mut sum: f64 = losses[..window].iter().map(|&v| v as f64).sum();
    out.push((sum / window as f64) as f32);
    for i in window..losses.len() {
        sum += losses[i] as f64 - losses[i - window] as f64;
        out.push((sum / window as f64) as f32);
    }
    out
}
