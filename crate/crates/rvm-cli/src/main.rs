//! `rvm` — command-line front end for the recurrent video masked
//! autoencoder: corpus generation, training, evaluation, visualization,
//! and the cost benchmark.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use rvm_core::checkpoint::{Checkpoint, RawCheckpoint};
use rvm_core::config::TrainConfig;
use rvm_core::error::Error;
use rvm_core::eval::bench::{cost_benchmark, rows_to_csv};
use rvm_core::eval::features::{recurrent_features, AggregatorKind};
use rvm_core::eval::noise_square::noise_square_experiment;
use rvm_core::eval::propagate::{patch_accuracy, propagate_labels, PropagationConfig};
use rvm_core::eval::viz::{kmeans_maps, pca3_maps, render_clusters, stability_curve, upscale_rgb};
use rvm_core::model::ModelWeights;
use rvm_core::ppm;
use rvm_core::reference;
use rvm_core::tensor::Tensor;
use rvm_core::video::{generate, SynthKind, SynthSpec, VideoClip};
use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const USAGE: &str = "rvm — recurrent video masked autoencoder

USAGE:
    rvm <SUBCOMMAND> [FLAGS]

SUBCOMMANDS:
    gen           Generate a synthetic clip directory (PPM frames + PGM truth)
    train         Train a model from a config file
    eval          Evaluate a checkpoint: propagation, stability, noise-square
    visualize     Render pca3 / kmeans feature maps as PPM files
    bench         FLOPs and wall-time table per aggregator kind
    inspect-ckpt  Print a checkpoint's header and tensor manifest

COMMON FLAGS:
    --help        Print help for the command (exit 0)
    --seed N      Seed (falls back to the RVM_SEED environment variable)
    --out DIR     Output directory (created if absent)

GEN FLAGS:
    --spec KIND   noise_square | moving_shape | translating_texture
    --t N --h N --w N --square N --vel-y N --vel-x N --patch N

TRAIN FLAGS:
    --config FILE  Config file (flat key = value sections)
    --resume CKPT  Continue from a checkpoint
    --steps N      Shorthand for --opt.total_steps
    --workers N    Worker threads for the batch pass
    --force        Allow overwriting existing checkpoints
    --<section>.<key> VALUE
                   Any config key as a dotted override, e.g.
                   --model.mask_ratio 0.95 (mirrors the file keys 1:1)

EVAL FLAGS:
    --ckpt FILE [--config FILE] [--frames DIR --labels PGM] [--out DIR]

VISUALIZE FLAGS:
    --ckpt FILE [--config FILE] [--spec KIND | --frames DIR]
    --mode pca3|kmeans [--k N] [--out DIR]

BENCH FLAGS:
    --kind recurrent|full_self_attention --t 8,16,32,64
    [--config FILE] [--runs N] [--out FILE.csv]

INSPECT-CKPT:
    rvm inspect-ckpt <FILE>
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("{msg}");
            eprintln!("\n{USAGE}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parsed flags: `--key value` pairs, boolean `--force`/`--help`, and one
/// optional positional argument.
struct Args {
    flags: Vec<(String, String)>,
    force: bool,
    help: bool,
    positional: Option<String>,
}

impl Args {
    fn parse(mut argv: VecDeque<String>) -> Result<Args, CliError> {
        let mut flags = Vec::new();
        let mut force = false;
        let mut help = false;
        let mut positional = None;
        while let Some(arg) = argv.pop_front() {
            if arg == "--help" || arg == "-h" {
                help = true;
            } else if arg == "--force" {
                force = true;
            } else if let Some(key) = arg.strip_prefix("--") {
                let value = argv
                    .pop_front()
                    .ok_or_else(|| usage(format!("flag --{key} needs a value")))?;
                flags.push((key.to_string(), value));
            } else if positional.is_none() {
                positional = Some(arg);
            } else {
                return Err(usage(format!("unexpected argument '{arg}'")));
            }
        }
        Ok(Args {
            flags,
            force,
            help,
            positional,
        })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        let pos = self.flags.iter().position(|(k, _)| k == key)?;
        Some(self.flags.remove(pos).1)
    }

    fn take_num<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| usage(format!("bad value '{v}' for --{key}"))),
        }
    }

    fn reject_leftovers(&self) -> CliResult {
        if let Some((k, _)) = self.flags.first() {
            return Err(usage(format!("unknown flag --{k}")));
        }
        Ok(())
    }
}

fn seed_from(args: &mut Args) -> Result<u64, CliError> {
    if let Some(s) = args.take_num::<u64>("seed")? {
        return Ok(s);
    }
    if let Ok(env) = std::env::var("RVM_SEED") {
        return env
            .parse()
            .map_err(|_| usage(format!("bad RVM_SEED value '{env}'")));
    }
    Ok(0)
}

fn run(argv: Vec<String>) -> CliResult {
    let mut argv: VecDeque<String> = argv.into();
    let sub = match argv.pop_front() {
        Some(s) if s == "--help" || s == "-h" => {
            println!("{USAGE}");
            return Ok(());
        }
        Some(s) => s,
        None => return Err(usage("missing subcommand")),
    };
    let mut args = Args::parse(argv)?;
    if args.help {
        println!("{USAGE}");
        return Ok(());
    }
    match sub.as_str() {
        "gen" => cmd_gen(&mut args),
        "train" => cmd_train(&mut args),
        "eval" => cmd_eval(&mut args),
        "visualize" => cmd_visualize(&mut args),
        "bench" => cmd_bench(&mut args),
        "inspect-ckpt" => cmd_inspect(&mut args),
        other => Err(usage(format!("unknown subcommand '{other}'"))),
    }
}

fn out_dir(args: &mut Args) -> Result<PathBuf, CliError> {
    let dir = args
        .take("out")
        .ok_or_else(|| usage("--out DIR is required"))?;
    let path = PathBuf::from(dir);
    std::fs::create_dir_all(&path).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(path)
}

// ── gen ──────────────────────────────────────────────────────────────

fn cmd_gen(args: &mut Args) -> CliResult {
    let kind_str = args
        .take("spec")
        .ok_or_else(|| usage("--spec KIND is required"))?;
    let kind = SynthKind::parse(&kind_str).map_err(|e| usage(e.to_string()))?;
    let seed = seed_from(args)?;
    let out = out_dir(args)?;
    let mut spec = SynthSpec::new(kind, seed);
    if let Some(t) = args.take_num("t")? {
        spec.t = t;
    }
    if let Some(h) = args.take_num("h")? {
        spec.h = h;
    }
    if let Some(w) = args.take_num("w")? {
        spec.w = w;
    }
    if let Some(s) = args.take_num("square")? {
        spec.square_size = s;
    }
    if let Some(v) = args.take_num("vel-y")? {
        spec.velocity.0 = v;
    }
    if let Some(v) = args.take_num("vel-x")? {
        spec.velocity.1 = v;
    }
    if let Some(p) = args.take_num("patch")? {
        spec.truth_patch = p;
    }
    args.reject_leftovers()?;
    let (clip, truth) = generate(&spec)?;
    ppm::export_clip(&out, &clip, Some(&truth))?;
    println!(
        "wrote {} frames ({}x{}) and truth maps to {}",
        clip.t,
        clip.h,
        clip.w,
        out.display()
    );
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────

fn cmd_train(args: &mut Args) -> CliResult {
    let out = out_dir(args)?;
    let mut cfg = match args.take("config") {
        Some(path) => TrainConfig::load(Path::new(&path))?,
        None => reference::tiny_noise_square_train(),
    };
    if let Some(seed) = args.take_num::<u64>("seed")? {
        cfg.seed = seed;
    } else if let Ok(env) = std::env::var("RVM_SEED") {
        cfg.seed = env
            .parse()
            .map_err(|_| usage(format!("bad RVM_SEED value '{env}'")))?;
    }
    if let Some(steps) = args.take_num("steps")? {
        cfg.opt.total_steps = steps;
    }
    if let Some(w) = args.take_num("workers")? {
        cfg.workers = w;
    }
    let resume = match args.take("resume") {
        Some(path) => Some(Checkpoint::load(Path::new(&path), &cfg.model)?),
        None => None,
    };
    // Every remaining dotted flag is a config override.
    let leftovers: Vec<(String, String)> = args.flags.drain(..).collect();
    for (key, value) in leftovers {
        if !key.contains('.') {
            return Err(usage(format!("unknown flag --{key}")));
        }
        cfg.apply(&key, &value).map_err(|e| usage(e.to_string()))?;
    }
    cfg.model.validate()?;
    std::fs::write(out.join("config.effective.cfg"), cfg.render())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let outcome = rvm_core::trainer::train(&cfg, &out, resume, args.force)?;
    println!(
        "trained to step {}; final checkpoint {}",
        outcome.checkpoint.step,
        outcome.final_checkpoint_path.display()
    );
    Ok(())
}

// ── eval ─────────────────────────────────────────────────────────────

fn load_weights(args: &mut Args) -> Result<(TrainConfig, ModelWeights<Tensor<f32>>), CliError> {
    let ckpt_path = args
        .take("ckpt")
        .ok_or_else(|| usage("--ckpt FILE is required"))?;
    let cfg = match args.take("config") {
        Some(path) => TrainConfig::load(Path::new(&path))?,
        None => reference::tiny_noise_square_train(),
    };
    let ckpt = Checkpoint::load(Path::new(&ckpt_path), &cfg.model)?;
    Ok((cfg, ckpt.weights))
}

fn cmd_eval(args: &mut Args) -> CliResult {
    let (cfg, weights) = load_weights(args)?;
    let seed = seed_from(args)?;
    let out = out_dir(args)?;
    let frames_dir = args.take("frames");
    let labels_path = args.take("labels");
    args.reject_leftovers()?;

    if let Some(dir) = frames_dir {
        // Real-data path: frame directory + first-frame labels.
        let clip = ppm::import_clip(Path::new(&dir))?;
        let labels_path =
            labels_path.ok_or_else(|| usage("--labels PGM is required with --frames"))?;
        let first = ppm::import_first_labels(
            Path::new(&labels_path),
            clip.h,
            clip.w,
            cfg.model.patch,
        )?;
        let features = recurrent_features(&clip, &weights, &cfg.model);
        let maps = propagate_labels(&features, &first, &PropagationConfig::default())?;
        for (t, map) in maps.iter().enumerate() {
            ppm::write_pgm(
                &out.join(format!("pred_{t:06}.pgm")),
                features.h_patches,
                features.w_patches,
                map,
            )?;
        }
        println!("wrote {} propagated label maps to {}", maps.len(), out.display());
        return Ok(());
    }

    // Synthetic reports.
    let spec = reference::noise_square_eval_spec_for(&cfg.model, seed ^ 0x5EED);
    let report = noise_square_experiment(&weights, &cfg.model, &spec, seed)?;
    std::fs::write(
        out.join("noise_square.csv"),
        format!(
            "metric,value\nrecurrent_iou,{:.6}\nframe_iou,{:.6}\nchance,{:.6}\n",
            report.recurrent_iou, report.frame_iou, report.chance
        ),
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;

    let (clip, truth) = generate(&spec)?;
    let features = recurrent_features(&clip, &weights, &cfg.model);
    let mut accs = Vec::new();
    for &h in reference::STABILITY_HORIZONS.iter() {
        let sub = features.truncated(h);
        let maps = propagate_labels(&sub, truth.frame(0), &PropagationConfig::default())?;
        accs.push(patch_accuracy(&maps, &truth.labels[..h]));
    }
    let curve = stability_curve(&accs)?;
    let mut csv = String::from("horizon,accuracy,normalized\n");
    for (i, &h) in reference::STABILITY_HORIZONS.iter().enumerate() {
        csv.push_str(&format!("{h},{:.6},{:.6}\n", accs[i], curve[i]));
    }
    std::fs::write(out.join("stability.csv"), csv)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let maps = propagate_labels(&features, truth.frame(0), &PropagationConfig::default())?;
    let mut csv = String::from("frame,accuracy\n");
    for t in 1..maps.len() {
        let hits = maps[t]
            .iter()
            .zip(truth.frame(t))
            .filter(|(a, b)| a == b)
            .count();
        csv.push_str(&format!("{t},{:.6}\n", hits as f64 / maps[t].len() as f64));
    }
    std::fs::write(out.join("propagation.csv"), csv)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    // Reconstruction dump: decode one masked future frame for inspection.
    let sources: Vec<Tensor<f32>> = (0..cfg.model.k_sources).map(|i| clip.frame(i)).collect();
    let gap = cfg.model.gap_min;
    let target = clip.frame(cfg.model.k_sources - 1 + gap);
    let mut mask_rng = rvm_core::rng::Rng::stream(seed, &[0xD0]);
    let (recon, recon_loss) =
        rvm_core::model::reconstruct_target(&weights, &cfg.model, &sources, &target, &mut mask_rng)?;
    ppm::write_ppm(
        &out.join(format!("recon_gap{gap}.ppm")),
        cfg.model.frame,
        cfg.model.frame,
        recon.data(),
    )?;
    ppm::write_ppm(
        &out.join(format!("target_gap{gap}.ppm")),
        cfg.model.frame,
        cfg.model.frame,
        target.data(),
    )?;

    println!(
        "noise-square IoU {:.3} (control {:.3}, chance {:.3}); recon loss {recon_loss:.4}; reports in {}",
        report.recurrent_iou,
        report.frame_iou,
        report.chance,
        out.display()
    );
    Ok(())
}

// ── visualize ────────────────────────────────────────────────────────

fn cmd_visualize(args: &mut Args) -> CliResult {
    let (cfg, weights) = load_weights(args)?;
    let seed = seed_from(args)?;
    let out = out_dir(args)?;
    let mode = args.take("mode").unwrap_or_else(|| "pca3".into());
    let k: usize = args.take_num("k")?.unwrap_or(5);
    let frames_dir = args.take("frames");
    let spec_kind = args.take("spec");
    args.reject_leftovers()?;

    let (clip, clip_name): (VideoClip, String) = match (frames_dir, spec_kind) {
        (Some(dir), _) => {
            let name = Path::new(&dir)
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "clip".into());
            (ppm::import_clip(Path::new(&dir))?, name)
        }
        (None, kind) => {
            let kind_str = kind.unwrap_or_else(|| "noise_square".into());
            let kind = SynthKind::parse(&kind_str).map_err(|e| usage(e.to_string()))?;
            let mut spec = SynthSpec::new(kind, seed);
            spec.h = cfg.model.frame;
            spec.w = cfg.model.frame;
            spec.truth_patch = cfg.model.patch;
            (generate(&spec)?.0, kind_str)
        }
    };
    let features = recurrent_features(&clip, &weights, &cfg.model);
    let scale = cfg.model.patch;
    match mode.as_str() {
        "pca3" => {
            let maps = pca3_maps(&features);
            for (t, rgb) in maps.iter().enumerate() {
                let (h, w, px) = upscale_rgb(rgb, features.h_patches, features.w_patches, scale);
                ppm::write_ppm(&out.join(format!("{clip_name}_pca3_{t:04}.ppm")), h, w, &px)?;
            }
            println!("wrote {} pca3 maps to {}", features.t, out.display());
        }
        "kmeans" => {
            let maps = kmeans_maps(&features, k, seed);
            for (t, map) in maps.iter().enumerate() {
                let (h, w, px) =
                    render_clusters(map, features.h_patches, features.w_patches, scale);
                ppm::write_ppm(
                    &out.join(format!("{clip_name}_kmeans{k}_{t:04}.ppm")),
                    h,
                    w,
                    &px,
                )?;
            }
            println!("wrote {} kmeans maps to {}", features.t, out.display());
        }
        other => return Err(usage(format!("unknown mode '{other}' (pca3|kmeans)"))),
    }
    Ok(())
}

// ── bench ────────────────────────────────────────────────────────────

fn cmd_bench(args: &mut Args) -> CliResult {
    let kind_str = args.take("kind").unwrap_or_else(|| "recurrent".into());
    let kind = AggregatorKind::parse(&kind_str)
        .ok_or_else(|| usage(format!("unknown kind '{kind_str}'")))?;
    let t_list = args.take("t").unwrap_or_else(|| "8,16,32,64".into());
    let t_values: Vec<usize> = t_list
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("bad --t list '{t_list}'")))?;
    let runs: usize = args.take_num("runs")?.unwrap_or(7);
    let cfg = match args.take("config") {
        Some(path) => TrainConfig::load(Path::new(&path))?,
        None => reference::tiny_noise_square_train(),
    };
    let seed = seed_from(args)?;
    let out_path = args.take("out").map(PathBuf::from);
    args.reject_leftovers()?;

    let weights = ModelWeights::<Tensor<f32>>::init(&cfg.model, seed);
    let rows = cost_benchmark(&weights, &cfg.model, kind, &t_values, runs)?;
    let csv = rows_to_csv(&rows);
    match out_path {
        Some(path) => {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| CliError::Runtime(e.to_string()))?;
            }
            std::fs::write(&path, &csv).map_err(|e| CliError::Runtime(e.to_string()))?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

// ── inspect-ckpt ─────────────────────────────────────────────────────

fn cmd_inspect(args: &mut Args) -> CliResult {
    let path = args
        .positional
        .clone()
        .or_else(|| args.take("ckpt"))
        .ok_or_else(|| usage("inspect-ckpt needs a checkpoint path"))?;
    args.reject_leftovers()?;
    let raw = RawCheckpoint::load(Path::new(&path))?;
    println!("version {} step {}", raw.version, raw.step);
    let manifest = raw.manifest();
    let mut total = 0usize;
    for (name, dtype, shape) in &manifest {
        let numel: usize = shape.iter().product();
        if !name.starts_with("__") {
            total += numel;
        }
        println!("{name}  {dtype}  {shape:?}");
    }
    println!("{} entries, {} model parameters", manifest.len(), total);
    Ok(())
}
