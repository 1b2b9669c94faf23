//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A `Tape` records one forward pass as an append-only list of nodes; each
//! node stores its value and the operation that produced it. `backward`
//! replays the list once, in reverse execution order, applying the chain
//! rule. Tapes are cheap to build and are dropped after backward, which
//! bounds memory under backpropagation through time.
//!
//! The op set is exactly what the model needs: batched matmul, softmax,
//! layernorm, the pointwise family (add/sub/mul/sigmoid/gelu/affine), row
//! broadcast, concat/gather along the token axis, axis swaps, reshape, and
//! full reductions. Every reduction runs in a fixed sequential order so
//! results are bit-identical across runs and worker counts.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a tape.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op<E: Scalar> {
    Leaf,
    Matmul { a: usize, b: usize },
    Softmax { x: usize, axis: usize },
    /// stats holds (mean, inv_std) per normalized row.
    LayerNorm { x: usize, gain: usize, bias: usize, stats: Vec<E> },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Sigmoid { x: usize },
    Gelu { x: usize },
    Affine { x: usize, mul: E },
    AddRow { x: usize, row: usize },
    ConcatRows { parts: Vec<usize> },
    GatherRows { x: usize, idx: Vec<usize> },
    SwapAxes { x: usize, a: usize, b: usize },
    Reshape { x: usize },
    SumAll { x: usize },
    MeanAll { x: usize },
}

struct Node<E: Scalar> {
    shape: Vec<usize>,
    value: Vec<E>,
    requires_grad: bool,
    op: Op<E>,
}

pub struct Tape<E: Scalar> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<E>, requires_grad: bool, op: Op<E>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Record a tensor as a leaf. Gradients flow back to it iff
    /// `t.requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor<E>) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            t.requires_grad,
            Op::Leaf,
        )
    }

    /// Record a tensor as a constant (no gradient).
    pub fn constant(&mut self, t: &Tensor<E>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), false, Op::Leaf)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        let numel: usize = shape.iter().product();
        self.push(shape.to_vec(), vec![E::ZERO; numel], false, Op::Leaf)
    }

    pub fn shape_of(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data_of(&self, v: Var) -> &[E] {
        &self.nodes[v.0].value
    }

    pub fn numel_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Copy a node's value out as a plain tensor.
    pub fn tensor_of(&self, v: Var) -> Tensor<E> {
        Tensor::from_vec(&self.nodes[v.0].shape, self.nodes[v.0].value.clone())
    }

    /// Gradient of a node, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[E]> {
        self.grads[v.0].as_deref()
    }

    // ── forward ops ──────────────────────────────────────────────────

    /// Matrix product with leading batch dimensions matched by equality:
    /// `[..., M, K] x [..., K, P] -> [..., M, P]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let ok = sa.len() >= 2
            && sa.len() == sb.len()
            && sa[..sa.len() - 2] == sb[..sb.len() - 2]
            && sa[sa.len() - 1] == sb[sb.len() - 2];
        assert!(ok, "matmul shape mismatch: {sa:?} x {sb:?}");
        let nd = sa.len();
        let (m, k, p) = (sa[nd - 2], sa[nd - 1], sb[nd - 1]);
        let batch: usize = sa[..nd - 2].iter().product();
        let mut shape = sa[..nd - 2].to_vec();
        shape.push(m);
        shape.push(p);

        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = vec![E::ZERO; batch * m * p];
        for bi in 0..batch {
            mm(
                &av[bi * m * k..(bi + 1) * m * k],
                &bv[bi * k * p..(bi + 1) * k * p],
                m,
                k,
                p,
                &mut out[bi * m * p..(bi + 1) * m * p],
            );
        }
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(shape, out, rg, Op::Matmul { a: a.0, b: b.0 })
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        assert!(axis < shape.len(), "softmax axis {axis} out of range for {shape:?}");
        let lane = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let xv = &self.nodes[x.0].value;
        let mut out = vec![E::ZERO; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * lane * inner + i;
                let mut mx = xv[base];
                for l in 1..lane {
                    mx = mx.maximum(xv[base + l * inner]);
                }
                let mut sum = E::ZERO;
                for l in 0..lane {
                    let e = (xv[base + l * inner] - mx).exp();
                    out[base + l * inner] = e;
                    sum += e;
                }
                for l in 0..lane {
                    out[base + l * inner] = out[base + l * inner] / sum;
                }
            }
        }
        let rg = self.nodes[x.0].requires_grad;
        self.push(shape, out, rg, Op::Softmax { x: x.0, axis })
    }

    /// Layer normalization over the last axis, with learned gain and bias.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: E) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let d = *shape.last().expect("layernorm on 0-d tensor");
        assert_eq!(
            self.nodes[gain.0].shape,
            vec![d],
            "layernorm gain shape {:?} does not match feature dim {d}",
            self.nodes[gain.0].shape
        );
        assert_eq!(
            self.nodes[bias.0].shape,
            vec![d],
            "layernorm bias shape {:?} does not match feature dim {d}",
            self.nodes[bias.0].shape
        );
        let rows = self.nodes[x.0].value.len() / d;
        let (xv, gv, bv) = (
            &self.nodes[x.0].value,
            &self.nodes[gain.0].value,
            &self.nodes[bias.0].value,
        );
        let mut out = vec![E::ZERO; xv.len()];
        let mut stats = Vec::with_capacity(rows * 2);
        let inv_d = E::ONE / E::from_f64(d as f64);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mut mean = E::ZERO;
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = E::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let inv = E::ONE / (var + eps).sqrt();
            stats.push(mean);
            stats.push(inv);
            for j in 0..d {
                out[r * d + j] = (row[j] - mean) * inv * gv[j] + bv[j];
            }
        }
        let rg = self.nodes[x.0].requires_grad
            || self.nodes[gain.0].requires_grad
            || self.nodes[bias.0].requires_grad;
        self.push(
            shape,
            out,
            rg,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                stats,
            },
        )
    }

    fn binary(&mut self, a: Var, b: Var, name: &str) -> (Vec<usize>, bool) {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        assert_eq!(sa, sb, "{name} shape mismatch: {sa:?} vs {sb:?}");
        (
            sa.clone(),
            self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (shape, rg) = self.binary(a, b, "add");
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        self.push(shape, out, rg, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (shape, rg) = self.binary(a, b, "sub");
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        self.push(shape, out, rg, Op::Sub { a: a.0, b: b.0 })
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (shape, rg) = self.binary(a, b, "mul");
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        self.push(shape, out, rg, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let out: Vec<E> = self.nodes[x.0].value.iter().map(|&v| sigmoid(v)).collect();
        let rg = self.nodes[x.0].requires_grad;
        self.push(shape, out, rg, Op::Sigmoid { x: x.0 })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let out: Vec<E> = self.nodes[x.0].value.iter().map(|&v| gelu(v)).collect();
        let rg = self.nodes[x.0].requires_grad;
        self.push(shape, out, rg, Op::Gelu { x: x.0 })
    }

    /// `mul * x + add`, elementwise with scalar coefficients.
    pub fn affine(&mut self, x: Var, mul: E, add: E) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let out: Vec<E> = self
            .nodes[x.0]
            .value
            .iter()
            .map(|&v| mul * v + add)
            .collect();
        let rg = self.nodes[x.0].requires_grad;
        self.push(shape, out, rg, Op::Affine { x: x.0, mul })
    }

    /// Scalar multiply.
    pub fn scale(&mut self, x: Var, c: E) -> Var {
        self.affine(x, c, E::ZERO)
    }

    /// Broadcast-add a `[D]` row vector over the last axis of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let d = *shape.last().expect("add_row on 0-d tensor");
        assert_eq!(
            self.nodes[row.0].shape,
            vec![d],
            "add_row: row shape {:?} does not match last dim {d}",
            self.nodes[row.0].shape
        );
        let rv = &self.nodes[row.0].value;
        let out: Vec<E> = self
            .nodes[x.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, &v)| v + rv[i % d])
            .collect();
        let rg = self.nodes[x.0].requires_grad || self.nodes[row.0].requires_grad;
        self.push(shape, out, rg, Op::AddRow { x: x.0, row: row.0 })
    }

    /// Concatenate along axis 0. All parts must agree on trailing dims.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of zero parts");
        let trailing = self.nodes[parts[0].0].shape[1..].to_vec();
        let mut rows = 0;
        let mut rg = false;
        for &p in parts {
            let s = &self.nodes[p.0].shape;
            assert_eq!(
                &s[1..],
                &trailing[..],
                "concat_rows trailing shape mismatch: {s:?} vs [_, {trailing:?}]"
            );
            rows += s[0];
            rg |= self.nodes[p.0].requires_grad;
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&trailing);
        let mut out = Vec::with_capacity(shape.iter().product());
        for &p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(
            shape,
            out,
            rg,
            Op::ConcatRows {
                parts: parts.iter().map(|v| v.0).collect(),
            },
        )
    }

    /// Select rows (axis 0) by index; repeats allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let s = self.nodes[x.0].shape.clone();
        assert!(s.len() >= 2, "gather_rows needs at least 2 dims, got {s:?}");
        let rows = s[0];
        let width: usize = s[1..].iter().product();
        for &i in idx {
            assert!(i < rows, "gather_rows index {i} out of {rows} rows");
        }
        let xv = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            out.extend_from_slice(&xv[i * width..(i + 1) * width]);
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&s[1..]);
        let rg = self.nodes[x.0].requires_grad;
        self.push(
            shape,
            out,
            rg,
            Op::GatherRows {
                x: x.0,
                idx: idx.to_vec(),
            },
        )
    }

    /// Swap two axes.
    pub fn swap_axes(&mut self, x: Var, a: usize, b: usize) -> Var {
        let s = self.nodes[x.0].shape.clone();
        assert!(a < s.len() && b < s.len(), "swap_axes {a},{b} out of range for {s:?}");
        let mut shape = s.clone();
        shape.swap(a, b);
        let out = permute_two(&self.nodes[x.0].value, &s, a, b);
        let rg = self.nodes[x.0].requires_grad;
        self.push(shape, out, rg, Op::SwapAxes { x: x.0, a, b })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            self.nodes[x.0].value.len(),
            "reshape {:?} -> {shape:?} changes element count",
            self.nodes[x.0].shape
        );
        let out = self.nodes[x.0].value.clone();
        let rg = self.nodes[x.0].requires_grad;
        self.push(shape.to_vec(), out, rg, Op::Reshape { x: x.0 })
    }

    /// Sum of all elements, as a `[1]` tensor. Sequential over flat index.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut s = E::ZERO;
        for &v in &self.nodes[x.0].value {
            s += v;
        }
        let rg = self.nodes[x.0].requires_grad;
        self.push(vec![1], vec![s], rg, Op::SumAll { x: x.0 })
    }

    /// Mean of all elements, as a `[1]` tensor. Sequential over flat index.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.len();
        let mut s = E::ZERO;
        for &v in &self.nodes[x.0].value {
            s += v;
        }
        let mean = s / E::from_f64(n as f64);
        let rg = self.nodes[x.0].requires_grad;
        self.push(vec![1], vec![mean], rg, Op::MeanAll { x: x.0 })
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Run the chain rule from a scalar loss. Each tape node is visited
    /// exactly once, in reverse execution order. Repeated calls without a
    /// fresh tape accumulate into existing gradients. After the sweep every
    /// `requires_grad` leaf has a gradient buffer (zeros if unreachable).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            // Nothing on the tape wants gradients; still honor the leaf contract.
            self.fill_leaf_grads();
            return Ok(());
        }
        // Leaf gradients persist across calls (accumulate semantics);
        // intermediate gradients belong to one sweep only.
        for i in 0..self.nodes.len() {
            if !matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = None;
            }
        }
        match &mut self.grads[loss.0] {
            Some(g) => g[0] += E::ONE,
            slot => *slot = Some(vec![E::ONE]),
        }

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad || self.grads[i].is_none() {
                continue;
            }
            let nodes = &self.nodes;
            let (before, at) = self.grads.split_at_mut(i);
            let gi = at[0].as_ref().expect("grad present");
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (sa, sb) = (&nodes[*a].shape, &nodes[*b].shape);
                    let nd = sa.len();
                    let (m, k, p) = (sa[nd - 2], sa[nd - 1], sb[nd - 1]);
                    let batch: usize = sa[..nd - 2].iter().product();
                    if nodes[*a].requires_grad {
                        let ga = ensure(&mut before[*a], nodes[*a].value.len());
                        for bi in 0..batch {
                            mm_nt(
                                &gi[bi * m * p..(bi + 1) * m * p],
                                &nodes[*b].value[bi * k * p..(bi + 1) * k * p],
                                m,
                                k,
                                p,
                                &mut ga[bi * m * k..(bi + 1) * m * k],
                            );
                        }
                    }
                    if nodes[*b].requires_grad {
                        let gb = ensure(&mut before[*b], nodes[*b].value.len());
                        for bi in 0..batch {
                            mm_tn(
                                &nodes[*a].value[bi * m * k..(bi + 1) * m * k],
                                &gi[bi * m * p..(bi + 1) * m * p],
                                m,
                                k,
                                p,
                                &mut gb[bi * k * p..(bi + 1) * k * p],
                            );
                        }
                    }
                }
                Op::Softmax { x, axis } => {
                    if nodes[*x].requires_grad {
                        let shape = &node.shape;
                        let lane = shape[*axis];
                        let inner: usize = shape[*axis + 1..].iter().product();
                        let outer: usize = shape[..*axis].iter().product();
                        let y = &node.value;
                        let gx = ensure(&mut before[*x], nodes[*x].value.len());
                        for o in 0..outer {
                            for ii in 0..inner {
                                let base = o * lane * inner + ii;
                                let mut dot = E::ZERO;
                                for l in 0..lane {
                                    let j = base + l * inner;
                                    dot += gi[j] * y[j];
                                }
                                for l in 0..lane {
                                    let j = base + l * inner;
                                    gx[j] += y[j] * (gi[j] - dot);
                                }
                            }
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, stats } => {
                    let d = *node.shape.last().unwrap();
                    let rows = node.value.len() / d;
                    let xv = &nodes[*x].value;
                    let gv = &nodes[*gain].value;
                    let inv_d = E::ONE / E::from_f64(d as f64);
                    if nodes[*x].requires_grad {
                        let gx = ensure(&mut before[*x], xv.len());
                        for r in 0..rows {
                            let (mean, inv) = (stats[2 * r], stats[2 * r + 1]);
                            let mut mean_dxhat = E::ZERO;
                            let mut mean_dxhat_xhat = E::ZERO;
                            for j in 0..d {
                                let xhat = (xv[r * d + j] - mean) * inv;
                                let dxhat = gi[r * d + j] * gv[j];
                                mean_dxhat += dxhat;
                                mean_dxhat_xhat += dxhat * xhat;
                            }
                            mean_dxhat *= inv_d;
                            mean_dxhat_xhat *= inv_d;
                            for j in 0..d {
                                let xhat = (xv[r * d + j] - mean) * inv;
                                let dxhat = gi[r * d + j] * gv[j];
                                gx[r * d + j] +=
                                    inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                            }
                        }
                    }
                    if nodes[*gain].requires_grad {
                        let gg = ensure(&mut before[*gain], d);
                        for r in 0..rows {
                            let (mean, inv) = (stats[2 * r], stats[2 * r + 1]);
                            for j in 0..d {
                                let xhat = (xv[r * d + j] - mean) * inv;
                                gg[j] += gi[r * d + j] * xhat;
                            }
                        }
                    }
                    if nodes[*bias].requires_grad {
                        let gb = ensure(&mut before[*bias], d);
                        for r in 0..rows {
                            for j in 0..d {
                                gb[j] += gi[r * d + j];
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    if nodes[*a].requires_grad {
                        accumulate(ensure(&mut before[*a], gi.len()), gi);
                    }
                    if nodes[*b].requires_grad {
                        accumulate(ensure(&mut before[*b], gi.len()), gi);
                    }
                }
                Op::Sub { a, b } => {
                    if nodes[*a].requires_grad {
                        accumulate(ensure(&mut before[*a], gi.len()), gi);
                    }
                    if nodes[*b].requires_grad {
                        let gb = ensure(&mut before[*b], gi.len());
                        for (g, &d) in gb.iter_mut().zip(gi) {
                            *g -= d;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if nodes[*a].requires_grad {
                        let ga = ensure(&mut before[*a], gi.len());
                        for ((g, &d), &bv) in ga.iter_mut().zip(gi).zip(&nodes[*b].value) {
                            *g += d * bv;
                        }
                    }
                    if nodes[*b].requires_grad {
                        let gb = ensure(&mut before[*b], gi.len());
                        for ((g, &d), &av) in gb.iter_mut().zip(gi).zip(&nodes[*a].value) {
                            *g += d * av;
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    if nodes[*x].requires_grad {
                        let gx = ensure(&mut before[*x], gi.len());
                        for ((g, &d), &y) in gx.iter_mut().zip(gi).zip(&node.value) {
                            *g += d * y * (E::ONE - y);
                        }
                    }
                }
                Op::Gelu { x } => {
                    if nodes[*x].requires_grad {
                        let gx = ensure(&mut before[*x], gi.len());
                        for ((g, &d), &xv) in gx.iter_mut().zip(gi).zip(&nodes[*x].value) {
                            *g += d * gelu_grad(xv);
                        }
                    }
                }
                Op::Affine { x, mul } => {
                    if nodes[*x].requires_grad {
                        let gx = ensure(&mut before[*x], gi.len());
                        for (g, &d) in gx.iter_mut().zip(gi) {
                            *g += d * *mul;
                        }
                    }
                }
                Op::AddRow { x, row } => {
                    if nodes[*x].requires_grad {
                        accumulate(ensure(&mut before[*x], gi.len()), gi);
                    }
                    if nodes[*row].requires_grad {
                        let d = nodes[*row].value.len();
                        let gr = ensure(&mut before[*row], d);
                        for (i, &g) in gi.iter().enumerate() {
                            gr[i % d] += g;
                        }
                    }
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p].value.len();
                        if nodes[p].requires_grad {
                            accumulate(ensure(&mut before[p], len), &gi[offset..offset + len]);
                        }
                        offset += len;
                    }
                }
                Op::GatherRows { x, idx } => {
                    if nodes[*x].requires_grad {
                        let width: usize = nodes[*x].shape[1..].iter().product();
                        let gx = ensure(&mut before[*x], nodes[*x].value.len());
                        for (r, &src) in idx.iter().enumerate() {
                            for j in 0..width {
                                gx[src * width + j] += gi[r * width + j];
                            }
                        }
                    }
                }
                Op::SwapAxes { x, a, b } => {
                    if nodes[*x].requires_grad {
                        let back = permute_two(gi, &node.shape, *a, *b);
                        accumulate(ensure(&mut before[*x], back.len()), &back);
                    }
                }
                Op::Reshape { x } => {
                    if nodes[*x].requires_grad {
                        accumulate(ensure(&mut before[*x], gi.len()), gi);
                    }
                }
                Op::SumAll { x } => {
                    if nodes[*x].requires_grad {
                        let g = gi[0];
                        let gx = ensure(&mut before[*x], nodes[*x].value.len());
                        for v in gx.iter_mut() {
                            *v += g;
                        }
                    }
                }
                Op::MeanAll { x } => {
                    if nodes[*x].requires_grad {
                        let n = nodes[*x].value.len();
                        let g = gi[0] / E::from_f64(n as f64);
                        let gx = ensure(&mut before[*x], n);
                        for v in gx.iter_mut() {
                            *v += g;
                        }
                    }
                }
            }
        }
        self.fill_leaf_grads();
        Ok(())
    }

    fn fill_leaf_grads(&mut self) {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf)
                && self.nodes[i].requires_grad
                && self.grads[i].is_none()
            {
                self.grads[i] = Some(vec![E::ZERO; self.nodes[i].value.len()]);
            }
        }
    }

    /// Accumulate a leaf's gradient into the tensor it was staged from.
    pub fn grad_into(&self, v: Var, target: &mut Tensor<E>) {
        if let Some(g) = self.grad(v) {
            target.accumulate_grad(g);
        }
    }
}

// ── scalar kernels ───────────────────────────────────────────────────

#[inline]
fn sigmoid<E: Scalar>(x: E) -> E {
    if x >= E::ZERO {
        E::ONE / (E::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::ONE + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu<E: Scalar>(x: E) -> E {
    let c = E::from_f64(GELU_C);
    let a = E::from_f64(GELU_A);
    let half = E::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (E::ONE + u.tanh())
}

#[inline]
fn gelu_grad<E: Scalar>(x: E) -> E {
    let c = E::from_f64(GELU_C);
    let a = E::from_f64(GELU_A);
    let half = E::from_f64(0.5);
    let three = E::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    half * (E::ONE + t) + half * x * (E::ONE - t * t) * c * (E::ONE + three * a * x * x)
}

fn zip_map<E: Scalar>(a: &[E], b: &[E], f: impl Fn(E, E) -> E) -> Vec<E> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate<E: Scalar>(dst: &mut [E], src: &[E]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn ensure<E: Scalar>(slot: &mut Option<Vec<E>>, len: usize) -> &mut Vec<E> {
    slot.get_or_insert_with(|| vec![E::ZERO; len])
}

/// C[m,p] = A[m,k] · B[k,p], accumulation over k in ascending order.
fn mm<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, p: usize, c: &mut [E]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * p..(i + 1) * p];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * p..(kk + 1) * p];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aik * bv;
            }
        }
    }
}

/// dA[m,k] += dC[m,p] · B[k,p]ᵀ
fn mm_nt<E: Scalar>(dc: &[E], b: &[E], m: usize, k: usize, p: usize, da: &mut [E]) {
    for i in 0..m {
        let dc_row = &dc[i * p..(i + 1) * p];
        let da_row = &mut da[i * k..(i + 1) * k];
        for kk in 0..k {
            let b_row = &b[kk * p..(kk + 1) * p];
            let mut s = E::ZERO;
            for (dcv, bv) in dc_row.iter().zip(b_row) {
                s += *dcv * *bv;
            }
            da_row[kk] += s;
        }
    }
}

/// dB[k,p] += A[m,k]ᵀ · dC[m,p]
fn mm_tn<E: Scalar>(a: &[E], dc: &[E], m: usize, k: usize, p: usize, db: &mut [E]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let dc_row = &dc[i * p..(i + 1) * p];
        for (kk, &aik) in a_row.iter().enumerate() {
            let db_row = &mut db[kk * p..(kk + 1) * p];
            for (dbv, &dcv) in db_row.iter_mut().zip(dc_row) {
                *dbv += aik * dcv;
            }
        }
    }
}

/// Copy with two axes swapped.
fn permute_two<E: Scalar>(src: &[E], shape: &[usize], a: usize, b: usize) -> Vec<E> {
    if a == b {
        return src.to_vec();
    }
    let nd = shape.len();
    let mut strides = vec![1usize; nd];
    for i in (0..nd - 1).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let mut out_shape = shape.to_vec();
    out_shape.swap(a, b);
    let mut out_strides = vec![1usize; nd];
    for i in (0..nd - 1).rev() {
        out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
    }
    let mut out = vec![E::ZERO; src.len()];
    let mut idx = vec![0usize; nd];
    for (flat, &v) in src.iter().enumerate() {
        // decode flat -> multi-index
        let mut rem = flat;
        for i in 0..nd {
            idx[i] = rem / strides[i];
            rem %= strides[i];
        }
        idx.swap(a, b);
        let mut dst = 0;
        for i in 0..nd {
            dst += idx[i] * out_strides[i];
        }
        out[dst] = v;
    }
    out
}
