//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Training and inference run in single precision; a double-precision
//! instantiation of the same code exists for finite-difference gradient
//! verification, where single-precision tolerances are unreachable.

mod check;
mod graph;
mod optim;
mod snapshot;

pub use check::{grad_check, GradCheckReport};
pub use graph::{Graph, Op, TensorId};
pub use optim::OptimState;
pub use snapshot::{
    read_snapshot, read_snapshot_file, write_snapshot, write_snapshot_file, SNAPSHOT_MAGIC,
};

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::rng::SeededRng;

/// Element type of tensors: `f32` for training/inference, `f64` for
/// gradient checking.
pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Default
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn exp(self) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    ShapeDataMismatch { shape: Vec<usize>, expected: usize, actual: usize },
    #[error("{op}: {what} dimension mismatch: {lhs:?} vs {rhs:?}")]
    DimMismatch { op: &'static str, what: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: expected rank-{expected} input, got shape {shape:?}")]
    BadRank { op: &'static str, expected: usize, shape: Vec<usize> },
    #[error("{op}: {msg}")]
    BadArgument { op: &'static str, msg: String },
    #[error("{op} produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("non-finite value in parameter '{name}' at flat index {index}")]
    NonFiniteParam { name: String, index: usize },
    #[error("tensor id {0} is not on this graph")]
    NotOnGraph(usize),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    LossNotScalar(Vec<usize>),
    #[error("loss does not depend on any tracked tensor of this graph")]
    LossNotTracked,
    #[error("parameter '{0}' has no gradient")]
    MissingGrad(String),
    #[error("optimizer state covers {expected} parameters, got {actual}")]
    OptimParamCount { expected: usize, actual: usize },
    #[error("optimizer state shape mismatch for parameter '{name}'")]
    OptimShapeMismatch { name: String },
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot i/o: {0}")]
    SnapshotIo(#[from] std::io::Error),
}

/// Dense N-dimensional array, row-major, with an optional gradient buffer.
#[derive(Debug, Clone)]
pub struct Tensor<S: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad: Option<Vec<S>>,
    requires_grad: bool,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch { shape, expected, actual: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "tensor construction", index });
        }
        Ok(Self { shape, data, grad: None, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![S::ZERO; n], grad: None, requires_grad: false }
    }

    pub fn full(shape: Vec<usize>, value: S) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![value; n], grad: None, requires_grad: false }
    }

    pub fn scalar(value: S) -> Self {
        Self { shape: vec![1], data: vec![value], grad: None, requires_grad: false }
    }

    /// Fan-in-scaled uniform init: U(-a, a) with a = sqrt(6 / fan_in), which
    /// preserves activation variance through relu layers.
    pub fn uniform_init(shape: Vec<usize>, fan_in: usize, rng: &mut SeededRng) -> Self {
        let n: usize = shape.iter().product();
        let a = (6.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..n).map(|_| S::from_f64(rng.uniform(-a, a))).collect();
        Self { shape, data, grad: None, requires_grad: false }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<S>>) {
        debug_assert!(grad.as_ref().is_none_or(|g| g.len() == self.data.len()));
        self.grad = grad;
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Euclidean norm of the values, in double precision.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt()
    }

    /// Lossy element-type conversion (f32 <-> f64); drops any gradient.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_shape_product() {
        let err = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeDataMismatch { expected: 6, actual: 5, .. }));
    }

    #[test]
    fn new_rejects_non_finite() {
        let err = Tensor::<f32>::new(vec![2], vec![1.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { index: 1, .. }));
    }

    #[test]
    fn uniform_init_is_seeded_and_bounded() {
        let mut r1 = SeededRng::new(5);
        let mut r2 = SeededRng::new(5);
        let a = Tensor::<f32>::uniform_init(vec![4, 4], 16, &mut r1);
        let b = Tensor::<f32>::uniform_init(vec![4, 4], 16, &mut r2);
        assert_eq!(a.data(), b.data());
        let bound = (6.0f32 / 16.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }
}
