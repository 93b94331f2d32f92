//! The view-specific CRNN subnetworks.
//!
//! Spectral subnets: a stack of conv blocks halving the frequency axis down
//! to 1, reshape to `(T, C)`, bidirectional GRU, attention pooling to the
//! embedding, and a dense classification head.
//!
//! The raw subnet prepends a 1-d front end (conv01, conv02, pool02) that
//! turns the waveform into a 2-d map, then a wider conv1/pool1 stage shrinks
//! time before the shared block pattern takes over.

use rand::Rng;

use crate::nn::{AttentionPool, BiGru, ConvBlock, ConvBlockSpec, FcStack, FwdCtx, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Padding, Tensor};
use crate::view::View;

use super::{Dims, NetError, NetworkConfig, Result};

struct RawFront {
    conv01: ConvBlock,
    conv02: ConvBlock,
    pool02: usize,
    out_channels: usize,
}

pub struct Subnet {
    pub view: View,
    front: Option<RawFront>,
    blocks: Vec<ConvBlock>,
    gru: BiGru,
    attn: AttentionPool,
    head: FcStack,
    pub embed_dim: usize,
    expected_raw_len: Option<usize>,
    n_bands: usize,
}

impl Subnet {
    pub(crate) fn build<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        cfg: &NetworkConfig,
        dims: &Dims,
        view: View,
    ) -> Self {
        let name = view.name();
        let dropout = cfg.dropout;
        let mut blocks = Vec::new();

        let (front, expected_raw_len, first_in, first_bands) = if view == View::Raw {
            let conv01 = ConvBlock::new(
                store,
                rng,
                &format!("{name}/conv01"),
                1,
                ConvBlockSpec {
                    kernel: (dims.conv01.kernel, 1),
                    stride: (dims.conv01.stride, 1),
                    n_filters: dims.conv01.filters,
                    padding: Padding::Valid,
                    pool: None,
                },
                dropout,
            );
            let conv02 = ConvBlock::new(
                store,
                rng,
                &format!("{name}/conv02"),
                dims.conv01.filters,
                ConvBlockSpec {
                    kernel: (dims.conv02.kernel, 1),
                    stride: (dims.conv02.stride, 1),
                    n_filters: dims.conv02.filters,
                    padding: Padding::Valid,
                    pool: None,
                },
                dropout,
            );
            // conv1/pool1: wider kernel, shrinks time by 4 and bands by 2.
            blocks.push(ConvBlock::new(
                store,
                rng,
                &format!("{name}/conv1"),
                1,
                ConvBlockSpec {
                    kernel: (5, 3),
                    stride: (1, 1),
                    n_filters: dims.conv1_filters,
                    padding: Padding::Same,
                    pool: Some(((4, 2), (4, 2))),
                },
                dropout,
            ));
            let mut in_ch = dims.conv1_filters;
            for (i, &f) in dims.raw_tail_filters.iter().enumerate() {
                blocks.push(ConvBlock::new(
                    store,
                    rng,
                    &format!("{name}/conv{}", i + 2),
                    in_ch,
                    ConvBlockSpec {
                        kernel: (3, 3),
                        stride: (1, 1),
                        n_filters: f,
                        padding: Padding::Same,
                        pool: Some(((1, 2), (1, 2))),
                    },
                    dropout,
                ));
                in_ch = f;
            }
            let front = RawFront {
                conv01,
                conv02,
                pool02: dims.pool02,
                out_channels: dims.conv02.filters,
            };
            (Some(front), Some(cfg.segment_len(View::Raw)), in_ch, dims.conv02.filters)
        } else {
            let mut in_ch = 1;
            for (i, &f) in dims.filters_2d.iter().enumerate() {
                blocks.push(ConvBlock::new(
                    store,
                    rng,
                    &format!("{name}/conv{}", i + 1),
                    in_ch,
                    ConvBlockSpec {
                        kernel: (3, 3),
                        stride: (1, 1),
                        n_filters: f,
                        padding: Padding::Same,
                        pool: Some(((1, 2), (1, 2))),
                    },
                    dropout,
                ));
                in_ch = f;
            }
            (None, None, in_ch, cfg.n_bands())
        };

        let gru = BiGru::new(store, rng, &format!("{name}/birnn"), first_in, dims.gru_hidden, dropout);
        let embed_dim = gru.output_width();
        let attn = AttentionPool::new(store, rng, &format!("{name}/attention"), embed_dim, dims.attn_dim);
        let head = FcStack::new(
            store,
            rng,
            &format!("{name}/head"),
            embed_dim,
            &dims.fc_subnet,
            cfg.n_classes,
            dropout,
        );
        Subnet {
            view,
            front,
            blocks,
            gru,
            attn,
            head,
            embed_dim,
            expected_raw_len,
            n_bands: first_bands,
        }
    }

    /// Expected input shape: `(T, bands, 1)` for spectral views (any `T`),
    /// `(len, 1, 1)` for raw.
    fn check_input<F: Scalar>(&self, x: &Tensor<F>) -> Result<()> {
        let bad = |expected: Vec<usize>| NetError::BadInput {
            view: self.view,
            expected,
            got: x.shape().to_vec(),
        };
        if let Some(len) = self.expected_raw_len {
            if x.shape() != [len, 1, 1] {
                return Err(bad(vec![len, 1, 1]));
            }
        } else if x.rank() != 3 || x.shape()[1] != self.n_bands || x.shape()[2] != 1 {
            return Err(bad(vec![0, self.n_bands, 1]));
        }
        Ok(())
    }

    /// Run the subnet up to its embedding.
    pub fn forward_embed<F: Scalar>(
        &self,
        ctx: &mut FwdCtx<'_, F>,
        x: &Tensor<F>,
    ) -> Result<Tensor<F>> {
        self.check_input(x)?;
        ctx.record_shape(format!("{}:input", self.view), x.shape());
        let mut y = x.clone();
        if let Some(front) = &self.front {
            y = front.conv01.forward(ctx, &y)?;
            y = front.conv02.forward(ctx, &y)?;
            y = ctx.tape.maxpool2d(&y, (front.pool02, 1), (front.pool02, 1))?;
            ctx.record_shape(format!("{}:pool02", self.view), y.shape());
            // (T, 1, C) -> (T, C, 1): same row-major buffer.
            let t = y.shape()[0];
            y = ctx.tape.reshape(&y, vec![t, front.out_channels, 1])?;
            ctx.record_shape(format!("{}:reshape0", self.view), y.shape());
        }
        for block in &self.blocks {
            y = block.forward(ctx, &y)?;
        }
        let t = y.shape()[0];
        let c = y.shape()[2];
        let y = ctx.tape.reshape(&y, vec![t, c])?;
        ctx.record_shape(format!("{}:reshape", self.view), y.shape());
        let y = self.gru.forward(ctx, &y)?;
        ctx.record_shape(format!("{}:birnn", self.view), y.shape());
        let e = self.attn.forward(ctx, &y)?;
        ctx.record_shape(format!("{}:attention", self.view), e.shape());
        Ok(e)
    }

    /// Classification logits from an embedding.
    pub fn head_logits<F: Scalar>(
        &self,
        ctx: &mut FwdCtx<'_, F>,
        embedding: &Tensor<F>,
    ) -> Result<Tensor<F>> {
        Ok(self.head.forward(ctx, embedding)?)
    }
}
