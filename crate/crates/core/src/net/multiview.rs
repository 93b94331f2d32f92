//! The multi-view network: one subnet per view, a joint head over the
//! concatenated embeddings, and one classification branch per view plus the
//! joint branch.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{FcStack, FwdCtx, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::view::{Branch, View};

use super::{NetError, NetworkConfig, Result, Subnet};

/// Per-view input tensors for one example.
pub type ViewInputs<F> = BTreeMap<View, Tensor<F>>;

/// Which branches a forward pass should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// Every view branch plus the joint branch.
    Full,
    /// One subnet and its own branch only.
    Single(View),
}

pub struct ForwardOutput<F: Scalar> {
    /// Per-view embeddings, in view order.
    pub embeddings: Vec<(View, Tensor<F>)>,
    /// Per-branch logits, view order then joint.
    pub logits: Vec<(Branch, Tensor<F>)>,
}

pub struct MultiViewNet<F: Scalar> {
    pub config: NetworkConfig,
    pub store: ParamStore<F>,
    subnets: Vec<Subnet>,
    joint: FcStack,
    joint_in_dim: usize,
}

impl<F: Scalar> MultiViewNet<F> {
    pub fn build(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let dims = config.dims();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let subnets: Vec<Subnet> = config
            .views
            .iter()
            .map(|&v| Subnet::build(&mut store, &mut rng, &config, &dims, v))
            .collect();
        let joint_in_dim: usize = subnets.iter().map(|s| s.embed_dim).sum();
        let joint = FcStack::new(
            &mut store,
            &mut rng,
            "joint/head",
            joint_in_dim,
            &dims.fc_joint,
            config.n_classes,
            config.dropout,
        );
        Ok(MultiViewNet { config, store, subnets, joint, joint_in_dim })
    }

    pub fn views(&self) -> &[View] {
        &self.config.views
    }

    /// Branch order: one per view, then the joint branch.
    pub fn branches(&self) -> Vec<Branch> {
        Branch::order(&self.config.views)
    }

    pub fn subnet(&self, view: View) -> Option<&Subnet> {
        self.subnets.iter().find(|s| s.view == view)
    }

    pub fn joint_in_dim(&self) -> usize {
        self.joint_in_dim
    }

    pub fn n_params(&self) -> usize {
        self.store.n_trainable()
    }

    /// Forward one example. `inputs` must hold a tensor for every view in
    /// scope: `(T, bands, 1)` for spectral views, `(len, 1, 1)` for raw.
    pub fn forward(
        &self,
        ctx: &mut FwdCtx<'_, F>,
        inputs: &ViewInputs<F>,
        scope: Scope,
    ) -> Result<ForwardOutput<F>> {
        let active: Vec<&Subnet> = match scope {
            Scope::Full => self.subnets.iter().collect(),
            Scope::Single(v) => {
                let s = self
                    .subnets
                    .iter()
                    .find(|s| s.view == v)
                    .ok_or(NetError::MissingInput(v))?;
                vec![s]
            }
        };

        let mut embeddings = Vec::with_capacity(active.len());
        let mut logits = Vec::with_capacity(active.len() + 1);
        for subnet in &active {
            let x = inputs.get(&subnet.view).ok_or(NetError::MissingInput(subnet.view))?;
            let e = subnet.forward_embed(ctx, x)?;
            let l = subnet.head_logits(ctx, &e)?;
            embeddings.push((subnet.view, e));
            logits.push((Branch::View(subnet.view), l));
        }

        if scope == Scope::Full {
            let refs: Vec<&Tensor<F>> = embeddings.iter().map(|(_, e)| e).collect();
            let joint_in = if refs.len() == 1 {
                refs[0].clone()
            } else {
                ctx.tape.concat_last(&refs)?
            };
            ctx.record_shape("joint:embedding", joint_in.shape());
            let l = self.joint.forward(ctx, &joint_in)?;
            logits.push((Branch::Joint, l));
        }
        Ok(ForwardOutput { embeddings, logits })
    }
}
