//! Layer abstractions over the tensor tape: parameter registry, forward
//! context, and the layer vocabulary of the CRNN subnetworks.

mod layers;

pub use layers::{AttentionPool, BiGru, ConvBlock, ConvBlockSpec, Dense, FcStack};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::{BatchStats, Tape, Tensor};

/// Handle to one entry in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Optimized by the training loop.
    Trainable,
    /// State carried across steps (batchnorm running stats), never optimized.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<F: Scalar> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<F>,
}

/// Owns every parameter tensor of a network. Layers hold [`ParamId`]s; the
/// optimizer and the checkpoint format walk the store by index.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Scalar> {
    entries: Vec<ParamEntry<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.push(name.into(), ParamKind::Trainable, value)
    }

    pub fn register_buffer(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.push(name.into(), ParamKind::Buffer, value)
    }

    fn push(&mut self, name: String, kind: ParamKind, value: Tensor<F>) -> ParamId {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "parameter registered twice: {name}"
        );
        self.entries.push(ParamEntry { name, kind, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<F>) {
        assert_eq!(self.entries[id.0].value.shape(), value.shape());
        self.entries[id.0].value = value;
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry<F> {
        &mut self.entries[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<F>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Total scalar count of trainable parameters.
    pub fn n_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Register every trainable parameter on a tape as a leaf. Buffers are
    /// not bound: they take part in forward arithmetic as plain constants and
    /// must never receive gradients.
    pub fn bind(&self, tape: &mut Tape<F>) -> Bound<F> {
        let tensors = self
            .entries
            .iter()
            .map(|e| match e.kind {
                ParamKind::Trainable => Some(tape.leaf(e.value.clone())),
                ParamKind::Buffer => None,
            })
            .collect();
        Bound { tensors }
    }
}

/// Per-step tape bindings of the trainable parameters, indexed by [`ParamId`].
pub struct Bound<F: Scalar> {
    tensors: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Bound<F> {
    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        self.tensors[id.0].as_ref().expect("buffer parameters are not bound")
    }

    pub fn node_of(&self, id: ParamId) -> Option<crate::tensor::NodeId> {
        self.tensors[id.0].as_ref().and_then(|t| t.node())
    }
}

/// Batch statistics one batchnorm layer produced during a training forward,
/// reported to the trainer which owns the running-stat update.
pub struct BnUpdate<F: Scalar> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub stats: BatchStats<F>,
}

/// Stage-name / output-shape pairs collected during a traced forward.
pub type ShapeTrace = Vec<(String, Vec<usize>)>;

/// Everything a layer needs during one forward pass.
pub struct FwdCtx<'a, F: Scalar> {
    pub tape: &'a mut Tape<F>,
    pub bound: &'a Bound<F>,
    pub store: &'a ParamStore<F>,
    pub train: bool,
    pub rng: &'a mut ChaCha8Rng,
    pub bn_updates: &'a mut Vec<BnUpdate<F>>,
    /// When set, layers append their stage output shapes here.
    pub trace: Option<&'a mut ShapeTrace>,
}

impl<F: Scalar> FwdCtx<'_, F> {
    pub fn record_shape(&mut self, stage: impl Into<String>, shape: &[usize]) {
        if let Some(trace) = self.trace.as_deref_mut() {
            trace.push((stage.into(), shape.to_vec()));
        }
    }
}

/// Glorot-uniform initialization.
pub fn glorot<F: Scalar>(
    rng: &mut impl Rng,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
) -> Tensor<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::cast(rng.random_range(-limit..limit))).collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    #[should_panic(expected = "registered twice")]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.register("w", Tensor::zeros(vec![2]));
        store.register("w", Tensor::zeros(vec![2]));
    }

    #[test]
    fn buffers_are_not_bound() {
        let mut store = ParamStore::<f64>::new();
        let w = store.register("w", Tensor::zeros(vec![2]));
        let b = store.register_buffer("stats", Tensor::zeros(vec![2]));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        assert!(bound.node_of(w).is_some());
        assert!(bound.tensors[b.0].is_none());
        assert_eq!(store.n_trainable(), 2);
    }

    #[test]
    fn glorot_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t: Tensor<f64> = glorot(&mut rng, vec![100, 50], 100, 50);
        let limit = (6.0 / 150.0f64).sqrt();
        assert!(t.iter().all(|&v| v.abs() < limit));
        assert!(t.iter().any(|&v| v.abs() > limit * 0.5));
    }
}
