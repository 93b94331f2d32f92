//! Primitive tensor operations and their backward rules.
//!
//! Elementwise binaries broadcast the right operand when it is a scalar or a
//! vector matching the last axis; that covers bias addition and scalar
//! normalizers without a general broadcasting engine.

use rand::Rng;

use crate::scalar::Scalar;

use super::{Result, Tape, Tensor, TensorError};

#[derive(Clone, Copy)]
enum Bcast {
    Same,
    RhsScalar,
    RhsLastAxis,
}

fn bcast_kind<F: Scalar>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<Bcast> {
    if a.shape() == b.shape() {
        Ok(Bcast::Same)
    } else if b.numel() == 1 {
        Ok(Bcast::RhsScalar)
    } else if b.rank() == 1 && b.numel() == a.last_dim() {
        Ok(Bcast::RhsLastAxis)
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            details: format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape()),
        })
    }
}

/// Sum a full-shaped gradient down to the broadcast operand's shape.
fn reduce_bcast<F: Scalar>(g: &[F], kind: Bcast, last: usize) -> Vec<F> {
    match kind {
        Bcast::Same => g.to_vec(),
        Bcast::RhsScalar => {
            vec![g.iter().fold(F::zero(), |acc, v| acc + *v)]
        }
        Bcast::RhsLastAxis => {
            let mut out = vec![F::zero(); last];
            for row in g.chunks_exact(last) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o = *o + *v;
                }
            }
            out
        }
    }
}

fn ew_forward<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, kind: Bcast, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let last = a.last_dim();
    let data = match kind {
        Bcast::Same => a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect(),
        Bcast::RhsScalar => {
            let y = b.data()[0];
            a.iter().map(|&x| f(x, y)).collect()
        }
        Bcast::RhsLastAxis => a
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % last]))
            .collect(),
    };
    Tensor::new(a.shape().to_vec(), data)
}

impl<F: Scalar> Tape<F> {
    pub fn add(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let kind = bcast_kind("add", a, b)?;
        let out = ew_forward(a, b, kind, |x, y| x + y);
        let (b_shape, last) = (b.shape().to_vec(), a.last_dim());
        Ok(self.emit(&[a, b], out, || {
            Box::new(move |g| {
                vec![
                    g.detached(),
                    Tensor::new(b_shape.clone(), reduce_bcast(g.data(), kind, last)),
                ]
            })
        }))
    }

    pub fn sub(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let kind = bcast_kind("sub", a, b)?;
        let out = ew_forward(a, b, kind, |x, y| x - y);
        let (b_shape, last) = (b.shape().to_vec(), a.last_dim());
        Ok(self.emit(&[a, b], out, || {
            Box::new(move |g| {
                let mut gb = reduce_bcast(g.data(), kind, last);
                for v in &mut gb {
                    *v = -*v;
                }
                vec![g.detached(), Tensor::new(b_shape.clone(), gb)]
            })
        }))
    }

    pub fn mul(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let kind = bcast_kind("mul", a, b)?;
        let out = ew_forward(a, b, kind, |x, y| x * y);
        let last = a.last_dim();
        Ok(self.emit(&[a, b], out, || {
            let (a, b) = (a.detached(), b.detached());
            Box::new(move |g| {
                let ga = ew_forward(g, &b, kind, |x, y| x * y);
                let prod: Vec<F> = g.iter().zip(a.iter()).map(|(&x, &y)| x * y).collect();
                let gb = Tensor::new(b.shape().to_vec(), reduce_bcast(&prod, kind, last));
                vec![ga, gb]
            })
        }))
    }

    /// Multiply by a plain constant (no gradient to the constant).
    pub fn scale(&mut self, a: &Tensor<F>, c: F) -> Tensor<F> {
        let out = Tensor::new(a.shape().to_vec(), a.iter().map(|&x| x * c).collect());
        self.emit(&[a], out, || {
            Box::new(move |g| vec![Tensor::new(g.shape().to_vec(), g.iter().map(|&x| x * c).collect())])
        })
    }

    pub fn matmul(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                details: format!("{:?} x {:?}", a.shape(), b.shape()),
            });
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let out = Tensor::new(vec![m, n], matmul_kernel(a.data(), b.data(), m, k, n));
        Ok(self.emit(&[a, b], out, || {
            let (a, b) = (a.detached(), b.detached());
            Box::new(move |g| {
                // da = g . b^T, db = a^T . g
                let mut da = vec![F::zero(); m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = F::zero();
                        let grow = &g.data()[i * n..(i + 1) * n];
                        let brow = &b.data()[p * n..(p + 1) * n];
                        for j in 0..n {
                            acc = acc + grow[j] * brow[j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                let mut db = vec![F::zero(); k * n];
                for i in 0..m {
                    let grow = &g.data()[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = a.data()[i * k + p];
                        let drow = &mut db[p * n..(p + 1) * n];
                        for j in 0..n {
                            drow[j] = drow[j] + av * grow[j];
                        }
                    }
                }
                vec![Tensor::new(vec![m, k], da), Tensor::new(vec![k, n], db)]
            })
        }))
    }

    pub fn transpose(&mut self, a: &Tensor<F>) -> Result<Tensor<F>> {
        if a.rank() != 2 {
            return Err(TensorError::InvalidArg {
                op: "transpose",
                details: format!("expected rank 2, got {:?}", a.shape()),
            });
        }
        let (m, n) = (a.shape()[0], a.shape()[1]);
        let out = Tensor::new(vec![n, m], transpose_kernel(a.data(), m, n));
        Ok(self.emit(&[a], out, || {
            Box::new(move |g| vec![Tensor::new(vec![m, n], transpose_kernel(g.data(), n, m))])
        }))
    }

    pub fn reshape(&mut self, a: &Tensor<F>, shape: Vec<usize>) -> Result<Tensor<F>> {
        if shape.iter().product::<usize>() != a.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                details: format!("{:?} -> {:?}", a.shape(), shape),
            });
        }
        let out = Tensor::new(shape, a.data().to_vec());
        let orig = a.shape().to_vec();
        Ok(self.emit(&[a], out, || {
            Box::new(move |g| vec![Tensor::new(orig.clone(), g.data().to_vec())])
        }))
    }

    /// Concatenate along the last axis. All other extents must match.
    pub fn concat_last(&mut self, parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArg { op: "concat", details: "no inputs".into() });
        }
        let lead = parts[0].shape()[..parts[0].rank() - 1].to_vec();
        for p in parts {
            if p.shape()[..p.rank() - 1] != lead[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    details: format!("{:?} vs {:?}", parts[0].shape(), p.shape()),
                });
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| p.last_dim()).collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, data);
        Ok(self.emit(parts, out, || {
            let widths = widths.clone();
            Box::new(move |g| {
                let mut grads = Vec::with_capacity(widths.len());
                let mut off = 0;
                for &w in &widths {
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + off..r * total + off + w]);
                    }
                    let mut shape = g.shape()[..g.rank() - 1].to_vec();
                    shape.push(w);
                    grads.push(Tensor::new(shape, d));
                    off += w;
                }
                grads
            })
        }))
    }

    /// Slice `[lo, hi)` of the last axis.
    pub fn slice_last(&mut self, a: &Tensor<F>, lo: usize, hi: usize) -> Result<Tensor<F>> {
        let last = a.last_dim();
        if lo >= hi || hi > last {
            return Err(TensorError::InvalidArg {
                op: "slice",
                details: format!("[{lo}, {hi}) of last axis {last}"),
            });
        }
        let w = hi - lo;
        let rows = a.numel() / last;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&a.data()[r * last + lo..r * last + hi]);
        }
        let mut shape = a.shape()[..a.rank() - 1].to_vec();
        shape.push(w);
        let out = Tensor::new(shape, data);
        let orig = a.shape().to_vec();
        Ok(self.emit(&[a], out, || {
            Box::new(move |g| {
                let mut d = vec![F::zero(); rows * last];
                for r in 0..rows {
                    d[r * last + lo..r * last + hi]
                        .copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                vec![Tensor::new(orig.clone(), d)]
            })
        }))
    }

    /// Slice rows `[r0, r1)` of the first axis.
    pub fn slice_rows(&mut self, a: &Tensor<F>, r0: usize, r1: usize) -> Result<Tensor<F>> {
        if a.rank() < 1 || r0 >= r1 || r1 > a.shape()[0] {
            return Err(TensorError::InvalidArg {
                op: "slice_rows",
                details: format!("[{r0}, {r1}) of first axis {:?}", a.shape()),
            });
        }
        let stride = a.numel() / a.shape()[0];
        let mut shape = a.shape().to_vec();
        shape[0] = r1 - r0;
        let out = Tensor::new(shape, a.data()[r0 * stride..r1 * stride].to_vec());
        let orig = a.shape().to_vec();
        Ok(self.emit(&[a], out, || {
            let total = orig.iter().product();
            Box::new(move |g| {
                let mut d = vec![F::zero(); total];
                d[r0 * stride..r1 * stride].copy_from_slice(g.data());
                vec![Tensor::new(orig.clone(), d)]
            })
        }))
    }

    /// Stack rank-1 tensors (or single rows) into a matrix, one per row.
    pub fn stack_rows(&mut self, parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArg { op: "stack_rows", details: "no inputs".into() });
        }
        let w = parts[0].numel();
        for p in parts {
            if p.numel() != w {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    details: format!("row widths {} vs {}", w, p.numel()),
                });
            }
        }
        let mut data = Vec::with_capacity(parts.len() * w);
        for p in parts {
            data.extend_from_slice(p.data());
        }
        let out = Tensor::new(vec![parts.len(), w], data);
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
        Ok(self.emit(parts, out, || {
            Box::new(move |g| {
                shapes
                    .iter()
                    .enumerate()
                    .map(|(i, s)| Tensor::new(s.clone(), g.data()[i * w..(i + 1) * w].to_vec()))
                    .collect()
            })
        }))
    }

    pub fn relu(&mut self, a: &Tensor<F>) -> Tensor<F> {
        let out = Tensor::new(
            a.shape().to_vec(),
            a.iter().map(|&x| if x > F::zero() { x } else { F::zero() }).collect(),
        );
        self.emit(&[a], out, || {
            let mask: Vec<F> =
                a.iter().map(|&x| if x > F::zero() { F::one() } else { F::zero() }).collect();
            Box::new(move |g| {
                vec![Tensor::new(
                    g.shape().to_vec(),
                    g.iter().zip(&mask).map(|(&g, &m)| g * m).collect(),
                )]
            })
        })
    }

    pub fn sigmoid(&mut self, a: &Tensor<F>) -> Tensor<F> {
        let out = Tensor::new(
            a.shape().to_vec(),
            a.iter().map(|&x| F::one() / (F::one() + (-x).exp())).collect(),
        );
        self.emit_unary_saved_output(a, out, |y, g| g * y * (F::one() - y))
    }

    pub fn tanh(&mut self, a: &Tensor<F>) -> Tensor<F> {
        let out = Tensor::new(a.shape().to_vec(), a.iter().map(|&x| x.tanh()).collect());
        self.emit_unary_saved_output(a, out, |y, g| g * (F::one() - y * y))
    }

    pub fn exp(&mut self, a: &Tensor<F>) -> Tensor<F> {
        let out = Tensor::new(a.shape().to_vec(), a.iter().map(|&x| x.exp()).collect());
        self.emit_unary_saved_output(a, out, |y, g| g * y)
    }

    pub fn log(&mut self, a: &Tensor<F>) -> Tensor<F> {
        let out = Tensor::new(a.shape().to_vec(), a.iter().map(|&x| x.ln()).collect());
        self.emit(&[a], out, || {
            let x = a.detached();
            Box::new(move |g| {
                vec![Tensor::new(
                    g.shape().to_vec(),
                    g.iter().zip(x.iter()).map(|(&g, &x)| g / x).collect(),
                )]
            })
        })
    }

    fn emit_unary_saved_output(
        &mut self,
        a: &Tensor<F>,
        out: Tensor<F>,
        df: impl Fn(F, F) -> F + Send + Copy + 'static,
    ) -> Tensor<F> {
        let saved = if self.should_record(&[a]) { Some(out.data().to_vec()) } else { None };
        self.emit(&[a], out, || {
            let y = saved.unwrap();
            Box::new(move |g| {
                vec![Tensor::new(
                    g.shape().to_vec(),
                    g.iter().zip(&y).map(|(&g, &y)| df(y, g)).collect(),
                )]
            })
        })
    }

    pub fn sum_all(&mut self, a: &Tensor<F>) -> Tensor<F> {
        let s = a.iter().fold(F::zero(), |acc, &v| acc + v);
        let shape = a.shape().to_vec();
        self.emit(&[a], Tensor::scalar(s), || {
            Box::new(move |g| {
                let n: usize = shape.iter().product();
                vec![Tensor::new(shape.clone(), vec![g.item(); n])]
            })
        })
    }

    pub fn mean_all(&mut self, a: &Tensor<F>) -> Tensor<F> {
        let n = F::cast_usize(a.numel());
        let s = a.iter().fold(F::zero(), |acc, &v| acc + v) / n;
        let shape = a.shape().to_vec();
        self.emit(&[a], Tensor::scalar(s), || {
            Box::new(move |g| {
                let count: usize = shape.iter().product();
                let v = g.item() / F::cast_usize(count);
                vec![Tensor::new(shape.clone(), vec![v; count])]
            })
        })
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: &Tensor<F>) -> Tensor<F> {
        let last = a.last_dim();
        let mut data = Vec::with_capacity(a.numel());
        for row in a.data().chunks_exact(last) {
            data.extend(softmax_row(row));
        }
        let out = Tensor::new(a.shape().to_vec(), data);
        let saved = if self.should_record(&[a]) { Some(out.data().to_vec()) } else { None };
        self.emit(&[a], out, || {
            let y = saved.unwrap();
            Box::new(move |g| {
                let mut dx = Vec::with_capacity(g.numel());
                for (grow, yrow) in g.data().chunks_exact(last).zip(y.chunks_exact(last)) {
                    let dot =
                        grow.iter().zip(yrow).fold(F::zero(), |acc, (&g, &y)| acc + g * y);
                    dx.extend(grow.iter().zip(yrow).map(|(&g, &y)| y * (g - dot)));
                }
                vec![Tensor::new(g.shape().to_vec(), dx)]
            })
        })
    }

    /// Numerically stable log-softmax along the last axis.
    pub fn log_softmax(&mut self, a: &Tensor<F>) -> Tensor<F> {
        let last = a.last_dim();
        let mut data = Vec::with_capacity(a.numel());
        for row in a.data().chunks_exact(last) {
            let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let lse = row.iter().fold(F::zero(), |acc, &x| acc + (x - m).exp()).ln();
            data.extend(row.iter().map(|&x| x - m - lse));
        }
        let out = Tensor::new(a.shape().to_vec(), data);
        let saved = if self.should_record(&[a]) {
            Some(out.data().iter().map(|&v| v.exp()).collect::<Vec<F>>())
        } else {
            None
        };
        self.emit(&[a], out, || {
            let p = saved.unwrap();
            Box::new(move |g| {
                let mut dx = Vec::with_capacity(g.numel());
                for (grow, prow) in g.data().chunks_exact(last).zip(p.chunks_exact(last)) {
                    let s = grow.iter().fold(F::zero(), |acc, &v| acc + v);
                    dx.extend(grow.iter().zip(prow).map(|(&g, &p)| g - p * s));
                }
                vec![Tensor::new(g.shape().to_vec(), dx)]
            })
        })
    }

    /// Inverted dropout: scales kept activations by `1/(1-rate)` during
    /// training so that inference is the identity.
    pub fn dropout(
        &mut self,
        a: &Tensor<F>,
        rate: f64,
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<Tensor<F>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArg {
                op: "dropout",
                details: format!("rate {rate} outside [0, 1)"),
            });
        }
        if !train || rate == 0.0 {
            return Ok(a.clone());
        }
        let keep = 1.0 - rate;
        let inv = F::cast(1.0 / keep);
        let mask: Vec<F> = (0..a.numel())
            .map(|_| if rng.random::<f64>() < keep { inv } else { F::zero() })
            .collect();
        let out = Tensor::new(
            a.shape().to_vec(),
            a.iter().zip(&mask).map(|(&x, &m)| x * m).collect(),
        );
        Ok(self.emit(&[a], out, || {
            Box::new(move |g| {
                vec![Tensor::new(
                    g.shape().to_vec(),
                    g.iter().zip(&mask).map(|(&g, &m)| g * m).collect(),
                )]
            })
        }))
    }
}

/// Stable softmax of one row (shared by inference paths).
pub fn softmax_row<F: Scalar>(row: &[F]) -> Vec<F> {
    let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = row.iter().map(|&x| (x - m).exp()).collect();
    let s = e.iter().fold(F::zero(), |acc, &v| acc + v);
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn matmul_kernel<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    out
}

fn transpose_kernel<F: Scalar>(a: &[F], m: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}
