//! Shared transformer building blocks: layernorm parameters, MLP, and
//! multi-head attention. Used by the frame encoder, the recurrent core, and
//! the reconstruction decoder.

use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNormParams<T> {
    pub gain: T,
    pub bias: T,
}

impl<E: Scalar> LayerNormParams<Tensor<E>> {
    pub fn init(dim: usize) -> Self {
        LayerNormParams {
            gain: Tensor::ones(&[dim]).param(),
            bias: Tensor::zeros(&[dim]).param(),
        }
    }
}

impl<T> LayerNormParams<T> {
    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(format!("{prefix}.gain"), &self.gain);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(format!("{prefix}.gain"), &mut self.gain);
        f(format!("{prefix}.bias"), &mut self.bias);
    }

    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> LayerNormParams<U> {
        LayerNormParams {
            gain: f(&self.gain),
            bias: f(&self.bias),
        }
    }
}

pub fn layernorm<E: Scalar>(tape: &mut Tape<E>, x: Var, p: &LayerNormParams<Var>) -> Var {
    tape.layernorm(x, p.gain, p.bias, E::from_f64(LAYER_NORM_EPS))
}

/// Two-layer MLP with GELU, `dim -> hidden -> dim`.
#[derive(Clone, Debug)]
pub struct MlpWeights<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

impl<E: Scalar> MlpWeights<Tensor<E>> {
    pub fn init(dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        MlpWeights {
            w1: Tensor::trunc_normal(&[dim, hidden], 0.02, rng).param(),
            b1: Tensor::zeros(&[hidden]).param(),
            w2: Tensor::trunc_normal(&[hidden, dim], 0.02, rng).param(),
            b2: Tensor::zeros(&[dim]).param(),
        }
    }
}

impl<T> MlpWeights<T> {
    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(format!("{prefix}.w1"), &self.w1);
        f(format!("{prefix}.b1"), &self.b1);
        f(format!("{prefix}.w2"), &self.w2);
        f(format!("{prefix}.b2"), &self.b2);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(format!("{prefix}.w1"), &mut self.w1);
        f(format!("{prefix}.b1"), &mut self.b1);
        f(format!("{prefix}.w2"), &mut self.w2);
        f(format!("{prefix}.b2"), &mut self.b2);
    }

    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> MlpWeights<U> {
        MlpWeights {
            w1: f(&self.w1),
            b1: f(&self.b1),
            w2: f(&self.w2),
            b2: f(&self.b2),
        }
    }
}

pub fn mlp<E: Scalar>(tape: &mut Tape<E>, x: Var, w: &MlpWeights<Var>) -> Var {
    let h = tape.matmul(x, w.w1);
    let h = tape.add_row(h, w.b1);
    let h = tape.gelu(h);
    let out = tape.matmul(h, w.w2);
    tape.add_row(out, w.b2)
}

/// Q/K/V/output projections for one attention block, all `[D, D]` plus biases.
#[derive(Clone, Debug)]
pub struct AttnWeights<T> {
    pub wq: T,
    pub bq: T,
    pub wk: T,
    pub bk: T,
    pub wv: T,
    pub bv: T,
    pub wo: T,
    pub bo: T,
}

impl<E: Scalar> AttnWeights<Tensor<E>> {
    pub fn init(dim: usize, rng: &mut Rng) -> Self {
        AttnWeights {
            wq: Tensor::trunc_normal(&[dim, dim], 0.02, rng).param(),
            bq: Tensor::zeros(&[dim]).param(),
            wk: Tensor::trunc_normal(&[dim, dim], 0.02, rng).param(),
            bk: Tensor::zeros(&[dim]).param(),
            wv: Tensor::trunc_normal(&[dim, dim], 0.02, rng).param(),
            bv: Tensor::zeros(&[dim]).param(),
            wo: Tensor::trunc_normal(&[dim, dim], 0.02, rng).param(),
            bo: Tensor::zeros(&[dim]).param(),
        }
    }
}

impl<T> AttnWeights<T> {
    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(format!("{prefix}.wq"), &self.wq);
        f(format!("{prefix}.bq"), &self.bq);
        f(format!("{prefix}.wk"), &self.wk);
        f(format!("{prefix}.bk"), &self.bk);
        f(format!("{prefix}.wv"), &self.wv);
        f(format!("{prefix}.bv"), &self.bv);
        f(format!("{prefix}.wo"), &self.wo);
        f(format!("{prefix}.bo"), &self.bo);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(format!("{prefix}.wq"), &mut self.wq);
        f(format!("{prefix}.bq"), &mut self.bq);
        f(format!("{prefix}.wk"), &mut self.wk);
        f(format!("{prefix}.bk"), &mut self.bk);
        f(format!("{prefix}.wv"), &mut self.wv);
        f(format!("{prefix}.bv"), &mut self.bv);
        f(format!("{prefix}.wo"), &mut self.wo);
        f(format!("{prefix}.bo"), &mut self.bo);
    }

    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> AttnWeights<U> {
        AttnWeights {
            wq: f(&self.wq),
            bq: f(&self.bq),
            wk: f(&self.wk),
            bk: f(&self.bk),
            wv: f(&self.wv),
            bv: f(&self.bv),
            wo: f(&self.wo),
            bo: f(&self.bo),
        }
    }
}

/// Multi-head scaled-dot-product attention.
///
/// Queries come from `q_in` `[Sq, D]`, keys and values from `kv_in`
/// `[Skv, D]`; self-attention is the `q_in == kv_in` case. Per head:
/// `softmax(QKᵀ/√(D/heads))·V`, heads concatenated, output-projected.
pub fn multihead_attention<E: Scalar>(
    tape: &mut Tape<E>,
    q_in: Var,
    kv_in: Var,
    w: &AttnWeights<Var>,
    heads: usize,
) -> Var {
    let dim = tape.shape_of(q_in)[1];
    assert_eq!(dim % heads, 0, "dim {dim} not divisible by {heads} heads");
    let dh = dim / heads;
    let sq = tape.shape_of(q_in)[0];
    let skv = tape.shape_of(kv_in)[0];

    let q = tape.matmul(q_in, w.wq);
    let q = tape.add_row(q, w.bq);
    let k = tape.matmul(kv_in, w.wk);
    let k = tape.add_row(k, w.bk);
    let v = tape.matmul(kv_in, w.wv);
    let v = tape.add_row(v, w.bv);

    // [S, D] -> [H, S, dh]
    let q = tape.reshape(q, &[sq, heads, dh]);
    let q = tape.swap_axes(q, 0, 1);
    let k = tape.reshape(k, &[skv, heads, dh]);
    let k = tape.swap_axes(k, 0, 1);
    let v = tape.reshape(v, &[skv, heads, dh]);
    let v = tape.swap_axes(v, 0, 1);

    let k_t = tape.swap_axes(k, 1, 2); // [H, dh, Skv]
    let scores = tape.matmul(q, k_t); // [H, Sq, Skv]
    let scores = tape.scale(scores, E::from_f64(1.0 / (dh as f64).sqrt()));
    let probs = tape.softmax(scores, 2);
    let ctx = tape.matmul(probs, v); // [H, Sq, dh]
    let ctx = tape.swap_axes(ctx, 0, 1); // [Sq, H, dh]
    let ctx = tape.reshape(ctx, &[sq, dim]);
    let out = tape.matmul(ctx, w.wo);
    tape.add_row(out, w.bo)
}

pub fn multihead_self_attention<E: Scalar>(
    tape: &mut Tape<E>,
    x: Var,
    w: &AttnWeights<Var>,
    heads: usize,
) -> Var {
    multihead_attention(tape, x, x, w, heads)
}

/// Sub-block ordering inside a combined attention block. The recurrent core
/// and the decoder each pick their own.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum BlockOrder {
    /// self-attention, MLP, cross-attention
    SelfMlpCross,
    /// cross-attention, MLP, self-attention
    CrossMlpSelf,
}

impl BlockOrder {
    pub fn name(self) -> &'static str {
        match self {
            BlockOrder::SelfMlpCross => "self_mlp_cross",
            BlockOrder::CrossMlpSelf => "cross_mlp_self",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "self_mlp_cross" => Some(BlockOrder::SelfMlpCross),
            "cross_mlp_self" => Some(BlockOrder::CrossMlpSelf),
            _ => None,
        }
    }
}

/// One pre-norm block with self-attention, MLP, and cross-attention paths.
/// Queries are normalized; cross-attention memory is consumed raw.
#[derive(Clone, Debug)]
pub struct CrossBlockWeights<T> {
    pub self_norm: LayerNormParams<T>,
    pub self_attn: AttnWeights<T>,
    pub mlp_norm: LayerNormParams<T>,
    pub mlp: MlpWeights<T>,
    pub cross_norm: LayerNormParams<T>,
    pub cross_attn: AttnWeights<T>,
}

impl<E: Scalar> CrossBlockWeights<Tensor<E>> {
    pub fn init(dim: usize, mlp_ratio: f64, rng: &mut Rng) -> Self {
        let hidden = (dim as f64 * mlp_ratio).round() as usize;
        CrossBlockWeights {
            self_norm: LayerNormParams::init(dim),
            self_attn: AttnWeights::init(dim, rng),
            mlp_norm: LayerNormParams::init(dim),
            mlp: MlpWeights::init(dim, hidden, rng),
            cross_norm: LayerNormParams::init(dim),
            cross_attn: AttnWeights::init(dim, rng),
        }
    }
}

impl<T> CrossBlockWeights<T> {
    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        self.self_norm.visit(&format!("{prefix}.self_norm"), f);
        self.self_attn.visit(&format!("{prefix}.self_attn"), f);
        self.mlp_norm.visit(&format!("{prefix}.mlp_norm"), f);
        self.mlp.visit(&format!("{prefix}.mlp"), f);
        self.cross_norm.visit(&format!("{prefix}.cross_norm"), f);
        self.cross_attn.visit(&format!("{prefix}.cross_attn"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        self.self_norm.visit_mut(&format!("{prefix}.self_norm"), f);
        self.self_attn.visit_mut(&format!("{prefix}.self_attn"), f);
        self.mlp_norm.visit_mut(&format!("{prefix}.mlp_norm"), f);
        self.mlp.visit_mut(&format!("{prefix}.mlp"), f);
        self.cross_norm.visit_mut(&format!("{prefix}.cross_norm"), f);
        self.cross_attn.visit_mut(&format!("{prefix}.cross_attn"), f);
    }

    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> CrossBlockWeights<U> {
        CrossBlockWeights {
            self_norm: self.self_norm.map(f),
            self_attn: self.self_attn.map(f),
            mlp_norm: self.mlp_norm.map(f),
            mlp: self.mlp.map(f),
            cross_norm: self.cross_norm.map(f),
            cross_attn: self.cross_attn.map(f),
        }
    }
}

/// Apply one cross block to `x` with residuals, in the configured order.
pub fn cross_block<E: Scalar>(
    tape: &mut Tape<E>,
    x: Var,
    memory: Var,
    w: &CrossBlockWeights<Var>,
    heads: usize,
    order: BlockOrder,
) -> Var {
    let self_path = |tape: &mut Tape<E>, x: Var| {
        let n = layernorm(tape, x, &w.self_norm);
        let a = multihead_self_attention(tape, n, &w.self_attn, heads);
        tape.add(x, a)
    };
    let mlp_path = |tape: &mut Tape<E>, x: Var| {
        let n = layernorm(tape, x, &w.mlp_norm);
        let m = mlp(tape, n, &w.mlp);
        tape.add(x, m)
    };
    let cross_path = |tape: &mut Tape<E>, x: Var| {
        let n = layernorm(tape, x, &w.cross_norm);
        let a = multihead_attention(tape, n, memory, &w.cross_attn, heads);
        tape.add(x, a)
    };
    match order {
        BlockOrder::SelfMlpCross => {
            let x = self_path(tape, x);
            let x = mlp_path(tape, x);
            cross_path(tape, x)
        }
        BlockOrder::CrossMlpSelf => {
            let x = cross_path(tape, x);
            let x = mlp_path(tape, x);
            self_path(tape, x)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_attn(tape: &mut Tape<f64>, dim: usize) -> AttnWeights<Var> {
        let mut eye = Tensor::<f64>::zeros(&[dim, dim]);
        for i in 0..dim {
            eye.data_mut()[i * dim + i] = 1.0;
        }
        let zero = Tensor::<f64>::zeros(&[dim]);
        AttnWeights {
            wq: tape.constant(&eye),
            bq: tape.constant(&zero),
            wk: tape.constant(&eye),
            bk: tape.constant(&zero),
            wv: tape.constant(&eye),
            bv: tape.constant(&zero),
            wo: tape.constant(&eye),
            bo: tape.constant(&zero),
        }
    }

    #[test]
    fn single_token_identity_projections_echo_input() {
        let mut tape = Tape::<f64>::new();
        let w = identity_attn(&mut tape, 4);
        let x = tape.constant(&Tensor::from_vec(&[1, 4], vec![0.3, -1.0, 2.0, 0.5]));
        let y = multihead_self_attention(&mut tape, x, &w, 1);
        for (a, b) in tape.data_of(y).iter().zip(tape.data_of(x)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_single_head_reimplementation() {
        // Straight-line scalar attention with no head plumbing, D=4, heads=1.
        let mut rng = Rng::new(77);
        let dim = 4;
        let s = 5;
        let x_t = Tensor::<f64>::uniform(&[s, dim], -1.0, 1.0, &mut rng);
        let mats: Vec<Tensor<f64>> = (0..4)
            .map(|_| Tensor::uniform(&[dim, dim], -0.5, 0.5, &mut rng))
            .collect();
        let biases: Vec<Tensor<f64>> = (0..4)
            .map(|_| Tensor::uniform(&[dim], -0.1, 0.1, &mut rng))
            .collect();

        let mut tape = Tape::<f64>::new();
        let w = AttnWeights {
            wq: tape.constant(&mats[0]),
            bq: tape.constant(&biases[0]),
            wk: tape.constant(&mats[1]),
            bk: tape.constant(&biases[1]),
            wv: tape.constant(&mats[2]),
            bv: tape.constant(&biases[2]),
            wo: tape.constant(&mats[3]),
            bo: tape.constant(&biases[3]),
        };
        let x = tape.constant(&x_t);
        let y = multihead_self_attention(&mut tape, x, &w, 1);
        let got = tape.data_of(y).to_vec();

        // Naive oracle.
        let lin = |x: &[f64], m: &Tensor<f64>, b: &Tensor<f64>| -> Vec<f64> {
            let mut out = vec![0.0; s * dim];
            for i in 0..s {
                for j in 0..dim {
                    let mut acc = b.data()[j];
                    for k in 0..dim {
                        acc += x[i * dim + k] * m.data()[k * dim + j];
                    }
                    out[i * dim + j] = acc;
                }
            }
            out
        };
        let q = lin(x_t.data(), &mats[0], &biases[0]);
        let k = lin(x_t.data(), &mats[1], &biases[1]);
        let v = lin(x_t.data(), &mats[2], &biases[2]);
        let scale = 1.0 / (dim as f64).sqrt();
        let mut ctx = vec![0.0; s * dim];
        for i in 0..s {
            let mut scores = vec![0.0; s];
            for j in 0..s {
                let mut dot = 0.0;
                for d in 0..dim {
                    dot += q[i * dim + d] * k[j * dim + d];
                }
                scores[j] = dot * scale;
            }
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|&z| (z - mx).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for j in 0..s {
                let wgt = exps[j] / denom;
                for d in 0..dim {
                    ctx[i * dim + d] += wgt * v[j * dim + d];
                }
            }
        }
        let expect = lin(&ctx, &mats[3], &biases[3]);
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-6, "{g} vs {e}");
        }
    }

    #[test]
    fn multi_head_splits_heads_correctly() {
        // 2 heads over D=4 must equal two independent D=2 attentions on the
        // corresponding feature halves when projections are identity.
        let mut tape = Tape::<f64>::new();
        let w = identity_attn(&mut tape, 4);
        let mut rng = Rng::new(8);
        let x_t = Tensor::<f64>::uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let x = tape.constant(&x_t);
        let y = multihead_self_attention(&mut tape, x, &w, 2);
        let got = tape.data_of(y).to_vec();

        for head in 0..2 {
            let cols = [head * 2, head * 2 + 1];
            // Naive D=2 attention over those columns.
            let sub: Vec<f64> = (0..3)
                .flat_map(|i| cols.iter().map(move |&c| (i, c)))
                .map(|(i, c)| x_t.data()[i * 4 + c])
                .collect();
            let scale = 1.0 / (2.0f64).sqrt();
            for i in 0..3 {
                let mut scores = [0.0; 3];
                for j in 0..3 {
                    let dot: f64 = (0..2).map(|d| sub[i * 2 + d] * sub[j * 2 + d]).sum();
                    scores[j] = dot * scale;
                }
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|&z| (z - mx).exp()).collect();
                let denom: f64 = exps.iter().sum();
                for d in 0..2 {
                    let mut acc = 0.0;
                    for j in 0..3 {
                        acc += exps[j] / denom * sub[j * 2 + d];
                    }
                    let gv = got[i * 4 + cols[d]];
                    assert!((gv - acc).abs() < 1e-9, "head {head} ({i},{d}): {gv} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn cross_attention_invariant_to_kv_order() {
        let mut rng = Rng::new(99);
        let dim = 8;
        let run = |perm: &[usize]| -> Vec<f64> {
            let mut rng_local = Rng::new(99);
            let mut tape = Tape::<f64>::new();
            let q_t = Tensor::<f64>::uniform(&[3, dim], -1.0, 1.0, &mut rng_local);
            let kv_t = Tensor::<f64>::uniform(&[6, dim], -1.0, 1.0, &mut rng_local);
            let w_store = AttnWeights::<Tensor<f64>>::init(dim, &mut rng_local);
            let w = w_store.map(&mut |t| tape.constant(t));
            let q = tape.constant(&q_t);
            let kv = tape.constant(&kv_t);
            let kv = tape.gather_rows(kv, perm);
            let y = multihead_attention(&mut tape, q, kv, &w, 2);
            tape.data_of(y).to_vec()
        };
        let base = run(&[0, 1, 2, 3, 4, 5]);
        let shuffled = run(&[4, 2, 0, 5, 1, 3]);
        for (a, b) in base.iter().zip(&shuffled) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let _ = rng.next_u64();
    }
}
