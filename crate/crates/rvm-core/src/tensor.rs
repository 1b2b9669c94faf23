//! Dense row-major tensors.
//!
//! `Tensor` is the storage type for everything real-valued: pixels, weights,
//! optimizer moments, extracted features. It carries an optional gradient
//! accumulator that `Tape::backward` fills for `requires_grad` leaves.
//! There is no implicit broadcasting; shapes are explicit everywhere.

use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Scalar> {
    shape: Vec<usize>,
    data: Vec<E>,
    pub requires_grad: bool,
    pub grad: Option<Vec<E>>,
}

impl<E: Scalar> Tensor<E> {
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {:?} wants {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![E::ZERO; numel])
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, E::ONE)
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![value; numel])
    }

    pub fn scalar(value: E) -> Self {
        Tensor::from_vec(&[1], vec![value])
    }

    /// Truncated-normal init (std, clipped at ±2 std), the transformer default.
    pub fn trunc_normal(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| E::from_f64(rng.truncated_normal(std)))
            .collect();
        Tensor::from_vec(shape, data)
    }

    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| E::from_f64(rng.uniform_in(lo, hi)))
            .collect();
        Tensor::from_vec(shape, data)
    }

    pub fn param(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            self.data.len(),
            "reshape {:?} -> {:?} changes element count",
            self.shape,
            shape
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Zero the gradient accumulator (allocating it if absent).
    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![E::ZERO; self.data.len()]);
    }

    /// Add `delta` into the gradient accumulator.
    pub fn accumulate_grad(&mut self, delta: &[E]) {
        assert_eq!(delta.len(), self.data.len(), "gradient length mismatch");
        let grad = self
            .grad
            .get_or_insert_with(|| vec![E::ZERO; self.data.len()]);
        for (g, &d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Convert element type (used to run gradient checks in f64).
    pub fn cast<F: Scalar>(&self) -> Tensor<F> {
        let data = self.data.iter().map(|&v| F::from_f64(v.to_f64())).collect();
        let mut out = Tensor::from_vec(&self.shape, data);
        out.requires_grad = self.requires_grad;
        out
    }
}
