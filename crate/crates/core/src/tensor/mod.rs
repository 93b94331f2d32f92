//! Dense tensors with tape-based reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a row-major n-dimensional array of scalars. Operations go
//! through a [`Tape`]: the tape computes the forward value and appends a node
//! holding whatever the backward pass needs. [`Tape::backward`] replays the
//! nodes in reverse id order and returns a gradient per recorded tensor.
//!
//! Tapes are define-by-run: one tape per training step, rebuilt each time.

mod conv;
mod ops;
mod tape;

pub use conv::{BatchStats, Padding};
pub use ops::softmax_row;
pub use tape::{Gradients, NodeId, Tape};

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({details})")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("{op}: invalid argument ({details})")]
    InvalidArg { op: &'static str, details: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tensor is not recorded on the tape")]
    NotOnTape,
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major tensor. `node` is set iff the tensor was produced by (or
/// registered on) a recording tape; only such tensors can receive gradients.
#[derive(Clone, Debug)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
    node: Option<NodeId>,
}

impl<F: Scalar> Tensor<F> {
    /// Build a tensor from a shape and row-major data.
    ///
    /// Panics if `product(shape) != data.len()`; that is a programming error,
    /// not a runtime condition.
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor { shape, data, node: None }
    }

    pub fn scalar(v: F) -> Self {
        Tensor::new(vec![1], vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![F::zero(); n])
    }

    pub fn full(shape: Vec<usize>, v: F) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![v; n])
    }

    pub fn from_vec(data: Vec<F>) -> Self {
        Tensor::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> F {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub(crate) fn with_node(mut self, node: NodeId) -> Self {
        self.node = Some(node);
        self
    }

    /// Last-axis extent (1 for scalars of shape `[1]`).
    pub fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, F> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Detached copy: same shape and data, no tape handle.
    pub fn detached(&self) -> Self {
        Tensor::new(self.shape.clone(), self.data.clone())
    }
}

/// Equality on shape and values; the tape handle is bookkeeping, not value.
impl<F: Scalar> PartialEq for Tensor<F> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_and_accessors() {
        let t = Tensor::<f64>::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.numel(), 6);
        assert_eq!(t.rank(), 2);
        assert!(t.node().is_none());
    }

    #[test]
    #[should_panic]
    fn shape_data_mismatch_panics() {
        let _ = Tensor::<f64>::new(vec![2, 2], vec![1., 2., 3.]);
    }

    #[test]
    fn equality_ignores_node() {
        let a = Tensor::<f64>::from_vec(vec![1., 2.]);
        let mut tape = Tape::new();
        let b = tape.leaf(Tensor::from_vec(vec![1., 2.]));
        assert_eq!(a, b);
    }
}
