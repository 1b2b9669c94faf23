//! Shared test oracles.
//!
//! The finite-difference checker below is the independent oracle for every
//! gradient assertion in this crate: it only ever evaluates the forward
//! pass, so it cannot share a failure mode with `Tape::backward`.

use rvm_core::{Tape, Tensor, Var};

/// Central finite difference step used across the gradient suites.
pub const FD_STEP: f64 = 1e-4;

/// Relative error floor: differences below this magnitude are noise.
pub const FD_FLOOR: f64 = 1e-6;

/// Max relative error between analytic gradients and central finite
/// differences, over every element of every parameter.
///
/// `build` must lease the given parameters onto the tape (in order) and
/// return a scalar loss. It is invoked fresh for every perturbed evaluation,
/// so it must be a pure function of the parameter values.
pub fn finite_diff_max_rel_err(
    params: &[Tensor<f64>],
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> f64 {
    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.constant(t)).collect();
        let loss = build(&mut tape, &vars);
        assert_eq!(tape.numel_of(loss), 1, "oracle needs a scalar loss");
        tape.data_of(loss)[0]
    };

    // Analytic gradients from one taped pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|t| {
            let mut p = t.clone();
            p.requires_grad = true;
            tape.leaf(&p)
        })
        .collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).expect("backward");

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).expect("leaf grad").to_vec();
        for ei in 0..params[pi].numel() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + FD_STEP;
            let up = eval(&work);
            work[pi].data_mut()[ei] = orig - FD_STEP;
            let down = eval(&work);
            work[pi].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

/// Deterministic pseudo-random tensor for oracle inputs.
#[allow(dead_code)] // each test binary uses a different subset of helpers
pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = rvm_core::Rng::new(seed);
    Tensor::uniform(shape, -1.5, 1.5, &mut rng)
}
