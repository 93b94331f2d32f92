//! The Wengert tape: recorded nodes, gradient accumulation, backward replay.

use crate::scalar::Scalar;

use super::{Result, Tensor, TensorError};

pub type NodeId = usize;

/// Backward rule of one node: maps the upstream gradient to one gradient per
/// input, in the same order the inputs were passed to the op.
type BackwardFn<F> = Box<dyn Fn(&Tensor<F>) -> Vec<Tensor<F>> + Send>;

struct Node<F: Scalar> {
    inputs: Vec<Option<NodeId>>,
    shape: Vec<usize>,
    backward: Option<BackwardFn<F>>,
}

/// Append-only record of operations for one forward pass.
///
/// Node inputs always have smaller ids than the node itself, so a single
/// reverse sweep visits every node exactly once. A tape built with
/// [`Tape::inference`] records nothing and adds no overhead beyond the
/// forward arithmetic.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    recording: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), recording: true }
    }

    /// A tape that computes forward values only.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a tensor as a differentiable leaf (parameter or input).
    pub fn leaf(&mut self, t: Tensor<F>) -> Tensor<F> {
        if !self.recording {
            return t;
        }
        let id = self.nodes.len();
        self.nodes.push(Node { inputs: Vec::new(), shape: t.shape().to_vec(), backward: None });
        t.with_node(id)
    }

    /// True when the next op over `inputs` should append a node.
    pub(super) fn should_record(&self, inputs: &[&Tensor<F>]) -> bool {
        self.recording && inputs.iter().any(|t| t.node().is_some())
    }

    /// Append a node for an op output. `make_backward` is only invoked when
    /// the op participates in differentiation, so ops can defer cloning their
    /// saved values until needed.
    pub(super) fn emit(
        &mut self,
        inputs: &[&Tensor<F>],
        out: Tensor<F>,
        make_backward: impl FnOnce() -> BackwardFn<F>,
    ) -> Tensor<F> {
        if !self.should_record(inputs) {
            return out;
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            inputs: inputs.iter().map(|t| t.node()).collect(),
            shape: out.shape().to_vec(),
            backward: Some(make_backward()),
        });
        out.with_node(id)
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every recorded
    /// tensor reachable from the loss; recorded but unreachable tensors read
    /// back as zero. The tape is left intact, so multiple sweeps over
    /// different losses on the same tape are allowed.
    pub fn backward(&self, loss: &Tensor<F>) -> Result<Gradients<F>> {
        let loss_id = loss.node().ok_or(TensorError::NotOnTape)?;
        if !loss.is_scalar() {
            return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss_id] = Some(vec![F::one()]);

        for id in (0..=loss_id).rev() {
            let node = &self.nodes[id];
            let Some(backward) = node.backward.as_ref() else { continue };
            let Some(g) = grads[id].clone() else { continue };
            let upstream = Tensor::new(node.shape.clone(), g);
            let input_grads = backward(&upstream);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (slot, grad) in node.inputs.iter().zip(input_grads) {
                let Some(input_id) = slot else { continue };
                match &mut grads[*input_id] {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(grad.data()) {
                            *a = *a + *g;
                        }
                    }
                    empty => *empty = Some(grad.into_data()),
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Result of a backward sweep: one gradient slot per tape node.
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Vec<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of the loss with respect to a recorded tensor. Zero for
    /// recorded tensors the loss does not depend on.
    pub fn get(&self, t: &Tensor<F>) -> Result<Tensor<F>> {
        let id = t.node().ok_or(TensorError::NotOnTape)?;
        Ok(self.by_id(id))
    }

    pub fn by_id(&self, id: NodeId) -> Tensor<F> {
        match &self.grads[id] {
            Some(g) => Tensor::new(self.shapes[id].clone(), g.clone()),
            None => Tensor::zeros(self.shapes[id].clone()),
        }
    }

    /// Raw gradient data of a node, if any reached it.
    pub fn raw_by_id(&self, id: NodeId) -> Option<&[F]> {
        self.grads[id].as_deref()
    }

    /// Whether any gradient actually reached this tensor.
    pub fn reached(&self, t: &Tensor<F>) -> bool {
        t.node().map(|id| self.grads[id].is_some()).unwrap_or(false)
    }
}
