//! Layer vocabulary: convolution block, bidirectional GRU, temporal
//! attention pooling, dense stacks.

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::{Padding, Result, Tensor};

use super::{glorot, BnUpdate, FwdCtx, ParamId, ParamStore};

const BN_EPS: f64 = 1e-5;

/// Geometry of one convolution block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvBlockSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub n_filters: usize,
    pub padding: Padding,
    /// Pool kernel/stride; `None` skips pooling (used by the raw front end
    /// where pooling is a separate stage).
    pub pool: Option<((usize, usize), (usize, usize))>,
}

/// conv -> batchnorm -> ReLU -> maxpool -> dropout over `(T, F, C)` input.
pub struct ConvBlock {
    pub spec: ConvBlockSpec,
    name: String,
    kernel: ParamId,
    gamma: ParamId,
    beta: ParamId,
    run_mean: ParamId,
    run_var: ParamId,
    dropout: f64,
}

impl ConvBlock {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        spec: ConvBlockSpec,
        dropout: f64,
    ) -> Self {
        let (kh, kw) = spec.kernel;
        let taps = kh * kw;
        let kernel = store.register(
            format!("{name}/kernel"),
            glorot(
                rng,
                vec![kh, kw, in_channels, spec.n_filters],
                taps * in_channels,
                taps * spec.n_filters,
            ),
        );
        let c = spec.n_filters;
        let gamma = store.register(format!("{name}/bn_gamma"), Tensor::full(vec![c], F::one()));
        let beta = store.register(format!("{name}/bn_beta"), Tensor::zeros(vec![c]));
        let run_mean = store.register_buffer(format!("{name}/bn_mean"), Tensor::zeros(vec![c]));
        let run_var =
            store.register_buffer(format!("{name}/bn_var"), Tensor::full(vec![c], F::one()));
        ConvBlock { spec, name: name.to_string(), kernel, gamma, beta, run_mean, run_var, dropout }
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut FwdCtx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let kernel = ctx.bound.get(self.kernel);
        let y = ctx.tape.conv2d(x, kernel, self.spec.stride, self.spec.padding)?;
        ctx.record_shape(format!("{}:conv", self.name), y.shape());
        let (y, stats) = ctx.tape.batchnorm(
            &y,
            ctx.bound.get(self.gamma),
            ctx.bound.get(self.beta),
            ctx.store.get(self.run_mean).data(),
            ctx.store.get(self.run_var).data(),
            2,
            ctx.train,
            F::cast(BN_EPS),
        )?;
        if let Some(stats) = stats {
            ctx.bn_updates.push(BnUpdate { mean_id: self.run_mean, var_id: self.run_var, stats });
        }
        let y = ctx.tape.relu(&y);
        let y = match self.spec.pool {
            Some((k, s)) => {
                let pooled = ctx.tape.maxpool2d(&y, k, s)?;
                ctx.record_shape(format!("{}:pool", self.name), pooled.shape());
                pooled
            }
            None => y,
        };
        ctx.tape.dropout(&y, self.dropout, ctx.train, ctx.rng)
    }
}

/// Fully connected layer over a `(1, in)` row.
pub struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
        n_in: usize,
        n_out: usize,
    ) -> Self {
        let w = store.register(format!("{name}/w"), glorot(rng, vec![n_in, n_out], n_in, n_out));
        let b = store.register(format!("{name}/b"), Tensor::zeros(vec![n_out]));
        Dense { w, b }
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut FwdCtx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = ctx.tape.matmul(x, ctx.bound.get(self.w))?;
        ctx.tape.add(&y, ctx.bound.get(self.b))
    }
}

/// Bidirectional GRU over `(T, D)`, outputs `(T, 2H)`.
///
/// Gates follow the original formulation: update `z` and reset `r` from
/// sigmoid, candidate `tanh(W_h x + U_h (r .* h))`, and
/// `h' = (1 - z) .* h + z .* candidate`.
pub struct BiGru {
    fwd: GruDirection,
    bwd: GruDirection,
    hidden: usize,
    dropout: f64,
}

struct GruDirection {
    /// Input weights `(D, 3H)`, gate columns packed `[z | r | candidate]`.
    w: ParamId,
    /// Recurrent weights `(H, 3H)`, same packing.
    u: ParamId,
    /// Gate biases `(3H,)`.
    b: ParamId,
}

impl GruDirection {
    fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
        n_in: usize,
        hidden: usize,
    ) -> Self {
        GruDirection {
            w: store.register(
                format!("{name}/w"),
                glorot(rng, vec![n_in, 3 * hidden], n_in, hidden),
            ),
            u: store.register(
                format!("{name}/u"),
                glorot(rng, vec![hidden, 3 * hidden], hidden, hidden),
            ),
            b: store.register(format!("{name}/b"), Tensor::zeros(vec![3 * hidden])),
        }
    }

    /// Hidden states for every step, in input order.
    fn run<F: Scalar>(
        &self,
        ctx: &mut FwdCtx<'_, F>,
        x: &Tensor<F>,
        reversed: bool,
    ) -> Result<Vec<Tensor<F>>> {
        let t_len = x.shape()[0];
        let h = self.u_hidden(ctx);
        let xw = ctx.tape.matmul(x, ctx.bound.get(self.w))?;
        let xw = ctx.tape.add(&xw, ctx.bound.get(self.b))?;
        let u = ctx.bound.get(self.u).clone();
        let u_zr = ctx.tape.slice_last(&u, 0, 2 * h)?;
        let u_h = ctx.tape.slice_last(&u, 2 * h, 3 * h)?;

        let mut state = ctx.tape.leaf(Tensor::zeros(vec![1, h]));
        let mut outputs = Vec::with_capacity(t_len);
        for step in 0..t_len {
            let t = if reversed { t_len - 1 - step } else { step };
            let xw_t = ctx.tape.slice_rows(&xw, t, t + 1)?;
            let hu = ctx.tape.matmul(&state, &u_zr)?;
            let pre_zr = {
                let x_zr = ctx.tape.slice_last(&xw_t, 0, 2 * h)?;
                ctx.tape.add(&x_zr, &hu)?
            };
            let zr = ctx.tape.sigmoid(&pre_zr);
            let z = ctx.tape.slice_last(&zr, 0, h)?;
            let r = ctx.tape.slice_last(&zr, h, 2 * h)?;

            let rh = ctx.tape.mul(&r, &state)?;
            let rhu = ctx.tape.matmul(&rh, &u_h)?;
            let x_h = ctx.tape.slice_last(&xw_t, 2 * h, 3 * h)?;
            let pre_cand = ctx.tape.add(&x_h, &rhu)?;
            let cand = ctx.tape.tanh(&pre_cand);

            // h' = h + z .* (cand - h)
            let delta = ctx.tape.sub(&cand, &state)?;
            let scaled = ctx.tape.mul(&z, &delta)?;
            state = ctx.tape.add(&state, &scaled)?;
            outputs.push(state.clone());
        }
        if reversed {
            outputs.reverse();
        }
        Ok(outputs)
    }

    fn u_hidden<F: Scalar>(&self, ctx: &FwdCtx<'_, F>) -> usize {
        ctx.store.get(self.u).shape()[0]
    }
}

impl BiGru {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
        n_in: usize,
        hidden: usize,
        dropout: f64,
    ) -> Self {
        BiGru {
            fwd: GruDirection::new(store, rng, &format!("{name}/fwd"), n_in, hidden),
            bwd: GruDirection::new(store, rng, &format!("{name}/bwd"), n_in, hidden),
            hidden,
            dropout,
        }
    }

    pub fn output_width(&self) -> usize {
        2 * self.hidden
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut FwdCtx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let fwd = self.fwd.run(ctx, x, false)?;
        let bwd = self.bwd.run(ctx, x, true)?;
        let rows: Vec<Tensor<F>> = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| ctx.tape.concat_last(&[f, b]))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor<F>> = rows.iter().collect();
        let out = ctx.tape.stack_rows(&refs)?;
        ctx.tape.dropout(&out, self.dropout, ctx.train, ctx.rng)
    }
}

/// Additive temporal attention pooling: `e_t = v^T tanh(W h_t + b)`,
/// `alpha = softmax(e)`, output `sum_t alpha_t h_t`.
pub struct AttentionPool {
    w: ParamId,
    b: ParamId,
    v: ParamId,
}

impl AttentionPool {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
        n_in: usize,
        attn_dim: usize,
    ) -> Self {
        AttentionPool {
            w: store.register(
                format!("{name}/w"),
                glorot(rng, vec![n_in, attn_dim], n_in, attn_dim),
            ),
            b: store.register(format!("{name}/b"), Tensor::zeros(vec![attn_dim])),
            v: store.register(format!("{name}/v"), glorot(rng, vec![attn_dim, 1], attn_dim, 1)),
        }
    }

    /// `(T, D) -> (D,)`.
    pub fn forward<F: Scalar>(&self, ctx: &mut FwdCtx<'_, F>, h: &Tensor<F>) -> Result<Tensor<F>> {
        let t_len = h.shape()[0];
        let d = h.shape()[1];
        let proj = ctx.tape.matmul(h, ctx.bound.get(self.w))?;
        let proj = ctx.tape.add(&proj, ctx.bound.get(self.b))?;
        let proj = ctx.tape.tanh(&proj);
        let scores = ctx.tape.matmul(&proj, ctx.bound.get(self.v))?;
        let scores = ctx.tape.reshape(&scores, vec![1, t_len])?;
        let alpha = ctx.tape.softmax(&scores);
        let pooled = ctx.tape.matmul(&alpha, h)?;
        ctx.tape.reshape(&pooled, vec![d])
    }
}

/// Hidden dense layers with ReLU and dropout, then a linear output layer.
/// Produces logits; softmax is applied by the loss or at inference.
pub struct FcStack {
    hidden: Vec<Dense>,
    out: Dense,
    dropout: f64,
}

impl FcStack {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
        n_in: usize,
        widths: &[usize],
        n_classes: usize,
        dropout: f64,
    ) -> Self {
        let mut hidden = Vec::with_capacity(widths.len());
        let mut d = n_in;
        for (i, &w) in widths.iter().enumerate() {
            hidden.push(Dense::new(store, rng, &format!("{name}/fc{}", i + 1), d, w));
            d = w;
        }
        let out = Dense::new(store, rng, &format!("{name}/fc{}", widths.len() + 1), d, n_classes);
        FcStack { hidden, out, dropout }
    }

    /// `(D,) -> (n_classes,)` logits.
    pub fn forward<F: Scalar>(&self, ctx: &mut FwdCtx<'_, F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut y = ctx.tape.reshape(x, vec![1, x.numel()])?;
        for layer in &self.hidden {
            y = layer.forward(ctx, &y)?;
            y = ctx.tape.relu(&y);
            y = ctx.tape.dropout(&y, self.dropout, ctx.train, ctx.rng)?;
        }
        y = self.out.forward(ctx, &y)?;
        let n = y.numel();
        ctx.tape.reshape(&y, vec![n])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx_parts<F: Scalar>(
        store: &ParamStore<F>,
        tape: &mut Tape<F>,
    ) -> (super::super::Bound<F>, ChaCha8Rng, Vec<BnUpdate<F>>) {
        let bound = store.bind(tape);
        (bound, ChaCha8Rng::seed_from_u64(0), Vec::new())
    }

    #[test]
    fn conv_block_halves_frequency() {
        // Table-style block: 3x3 SAME conv, (1,2)/(1,2) pool.
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ConvBlockSpec {
            kernel: (3, 3),
            stride: (1, 1),
            n_filters: 32,
            padding: Padding::Same,
            pool: Some(((1, 2), (1, 2))),
        };
        let block = ConvBlock::new(&mut store, &mut rng, "conv1", 1, spec, 0.0);
        let mut tape = Tape::new();
        let (bound, mut rng2, mut bn) = ctx_parts(&store, &mut tape);
        let mut ctx = FwdCtx {
            tape: &mut tape,
            bound: &bound,
            store: &store,
            train: true,
            rng: &mut rng2,
            bn_updates: &mut bn,
            trace: None,
        };
        let x = Tensor::zeros(vec![75, 64, 1]);
        let y = block.forward(&mut ctx, &x).unwrap();
        assert_eq!(y.shape(), &[75, 32, 32]);
        assert_eq!(bn.len(), 1);
    }

    #[test]
    fn conv_block_pool_underflow_errors() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ConvBlockSpec {
            kernel: (3, 3),
            stride: (1, 1),
            n_filters: 4,
            padding: Padding::Same,
            pool: Some(((1, 2), (1, 2))),
        };
        let block = ConvBlock::new(&mut store, &mut rng, "c", 1, spec, 0.0);
        let mut tape = Tape::new();
        let (bound, mut rng2, mut bn) = ctx_parts(&store, &mut tape);
        let mut ctx = FwdCtx {
            tape: &mut tape,
            bound: &bound,
            store: &store,
            train: false,
            rng: &mut rng2,
            bn_updates: &mut bn,
            trace: None,
        };
        let x = Tensor::zeros(vec![5, 1, 1]);
        assert!(block.forward(&mut ctx, &x).is_err());
    }

    #[test]
    fn bigru_shape_and_zero_fixpoint() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gru = BiGru::new(&mut store, &mut rng, "gru", 8, 6, 0.0);
        let mut tape = Tape::new();
        let (bound, mut rng2, mut bn) = ctx_parts(&store, &mut tape);
        let mut ctx = FwdCtx {
            tape: &mut tape,
            bound: &bound,
            store: &store,
            train: false,
            rng: &mut rng2,
            bn_updates: &mut bn,
            trace: None,
        };
        // Zero input and zero biases keep the state at exactly zero.
        let x = Tensor::zeros(vec![5, 8]);
        let y = gru.forward(&mut ctx, &x).unwrap();
        assert_eq!(y.shape(), &[5, 12]);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_pool_equal_rows_returns_the_row() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let attn = AttentionPool::new(&mut store, &mut rng, "attn", 4, 3);
        let mut tape = Tape::new();
        let (bound, mut rng2, mut bn) = ctx_parts(&store, &mut tape);
        let mut ctx = FwdCtx {
            tape: &mut tape,
            bound: &bound,
            store: &store,
            train: false,
            rng: &mut rng2,
            bn_updates: &mut bn,
            trace: None,
        };
        let row = [0.5, -1.0, 2.0, 0.25];
        let data: Vec<f64> = row.iter().cycle().take(4 * 6).cloned().collect();
        let h = Tensor::new(vec![6, 4], data);
        let y = attn.forward(&mut ctx, &h).unwrap();
        assert_eq!(y.shape(), &[4]);
        for (got, want) in y.iter().zip(&row) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_pool_single_step_is_identity() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let attn = AttentionPool::new(&mut store, &mut rng, "attn", 4, 3);
        let mut tape = Tape::new();
        let (bound, mut rng2, mut bn) = ctx_parts(&store, &mut tape);
        let mut ctx = FwdCtx {
            tape: &mut tape,
            bound: &bound,
            store: &store,
            train: false,
            rng: &mut rng2,
            bn_updates: &mut bn,
            trace: None,
        };
        let h = Tensor::new(vec![1, 4], vec![3.0, -1.5, 0.0, 7.0]);
        let y = attn.forward(&mut ctx, &h).unwrap();
        assert_eq!(y.data(), h.data());
    }

    #[test]
    fn attention_output_stays_in_convex_hull() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let attn = AttentionPool::new(&mut store, &mut rng, "attn", 6, 4);
        let mut tape = Tape::new();
        let (bound, mut rng2, mut bn) = ctx_parts(&store, &mut tape);
        let mut ctx = FwdCtx {
            tape: &mut tape,
            bound: &bound,
            store: &store,
            train: false,
            rng: &mut rng2,
            bn_updates: &mut bn,
            trace: None,
        };
        let mut gen = ChaCha8Rng::seed_from_u64(17);
        let data: Vec<f64> = (0..10 * 6).map(|_| gen.random_range(-2.0..2.0)).collect();
        let h = Tensor::new(vec![10, 6], data);
        let y = attn.forward(&mut ctx, &h).unwrap();
        for d in 0..6 {
            let column: Vec<f64> = (0..10).map(|t| h.data()[t * 6 + d]).collect();
            let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(y.data()[d] >= lo - 1e-12 && y.data()[d] <= hi + 1e-12);
        }
    }

    #[test]
    fn fc_stack_shapes_and_zero_logits() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fc = FcStack::new(&mut store, &mut rng, "head", 512, &[1024, 1024], 50, 0.0);
        // Zero every parameter: logits must be exactly zero (uniform softmax).
        let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let z = Tensor::zeros(store.get(id).shape().to_vec());
            store.set(id, z);
        }
        let mut tape = Tape::new();
        let (bound, mut rng2, mut bn) = ctx_parts(&store, &mut tape);
        let mut ctx = FwdCtx {
            tape: &mut tape,
            bound: &bound,
            store: &store,
            train: false,
            rng: &mut rng2,
            bn_updates: &mut bn,
            trace: None,
        };
        let x = Tensor::full(vec![512], 0.7);
        let y = fc.forward(&mut ctx, &x).unwrap();
        assert_eq!(y.shape(), &[50]);
        assert!(y.iter().all(|&v| v == 0.0));
    }
}
