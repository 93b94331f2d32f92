//! Spatial ops over `(height, width, channels)` tensors: 2-d convolution,
//! max pooling, and batch normalization.

use crate::scalar::Scalar;

use super::{Result, Tape, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

impl std::str::FromStr for Padding {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "same" => Ok(Padding::Same),
            "valid" => Ok(Padding::Valid),
            other => Err(format!("invalid padding kind: {other}")),
        }
    }
}

/// Output extent and leading pad for one spatial dimension.
fn conv_extent(input: usize, k: usize, s: usize, padding: Padding) -> Result<(usize, usize)> {
    if s == 0 {
        return Err(TensorError::InvalidArg { op: "conv2d", details: "stride must be positive".into() });
    }
    match padding {
        Padding::Valid => {
            if input < k {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    details: format!("kernel {k} exceeds input extent {input} (VALID)"),
                });
            }
            Ok(((input - k) / s + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

/// Batch statistics produced by a training-mode batchnorm, reported back to
/// the caller so it can fold them into the running estimates.
#[derive(Clone, Debug)]
pub struct BatchStats<F: Scalar> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

impl<F: Scalar> Tape<F> {
    /// 2-d convolution of `x: (H, W, Cin)` with `k: (kh, kw, Cin, Cout)`.
    /// No bias term; the layers add normalization or bias themselves.
    pub fn conv2d(
        &mut self,
        x: &Tensor<F>,
        k: &Tensor<F>,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Tensor<F>> {
        if x.rank() != 3 || k.rank() != 4 || x.shape()[2] != k.shape()[2] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                details: format!("input {:?} vs kernel {:?}", x.shape(), k.shape()),
            });
        }
        let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw, cout) = (k.shape()[0], k.shape()[1], k.shape()[3]);
        let (oh, pad_h) = conv_extent(h, kh, stride.0, padding)?;
        let (ow, pad_w) = conv_extent(w, kw, stride.1, padding)?;

        let out = conv_forward(
            x.data(), k.data(), h, w, cin, kh, kw, cout, oh, ow, stride, (pad_h, pad_w),
        );
        let out = Tensor::new(vec![oh, ow, cout], out);
        Ok(self.emit(&[x, k], out, || {
            let (x, k) = (x.detached(), k.detached());
            Box::new(move |g| {
                let (dx, dk) = conv_backward(
                    x.data(), k.data(), g.data(), h, w, cin, kh, kw, cout, oh, ow, stride,
                    (pad_h, pad_w),
                );
                vec![
                    Tensor::new(vec![h, w, cin], dx),
                    Tensor::new(vec![kh, kw, cin, cout], dk),
                ]
            })
        }))
    }

    /// Max pooling over `x: (H, W, C)` with VALID boundaries. Ties go to the
    /// first position in row-major scan order.
    pub fn maxpool2d(
        &mut self,
        x: &Tensor<F>,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Tensor<F>> {
        if x.rank() != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "maxpool2d",
                details: format!("expected rank 3 input, got {:?}", x.shape()),
            });
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(TensorError::InvalidArg {
                op: "maxpool2d",
                details: "stride must be positive".into(),
            });
        }
        let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if h < kernel.0 || w < kernel.1 {
            return Err(TensorError::ShapeMismatch {
                op: "maxpool2d",
                details: format!("kernel {:?} exceeds input extents ({h}, {w})", kernel),
            });
        }
        let oh = (h - kernel.0) / stride.0 + 1;
        let ow = (w - kernel.1) / stride.1 + 1;

        let mut data = vec![F::zero(); oh * ow * c];
        let mut argmax = vec![0usize; oh * ow * c];
        for i in 0..oh {
            for j in 0..ow {
                for ch in 0..c {
                    let mut best = F::neg_infinity();
                    let mut best_idx = 0;
                    for di in 0..kernel.0 {
                        for dj in 0..kernel.1 {
                            let idx = ((i * stride.0 + di) * w + (j * stride.1 + dj)) * c + ch;
                            if x.data()[idx] > best {
                                best = x.data()[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (i * ow + j) * c + ch;
                    data[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        let out = Tensor::new(vec![oh, ow, c], data);
        let n_in = h * w * c;
        Ok(self.emit(&[x], out, || {
            Box::new(move |g| {
                let mut dx = vec![F::zero(); n_in];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src] = dx[src] + g.data()[o];
                }
                vec![Tensor::new(vec![h, w, c], dx)]
            })
        }))
    }

    /// Batch normalization over every axis except `axis`.
    ///
    /// In training mode the normalization uses the current tensor's own
    /// statistics (biased variance) and reports them back for the caller's
    /// running estimates; in inference mode it uses `running_mean` /
    /// `running_var`, which receive no gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: &Tensor<F>,
        gamma: &Tensor<F>,
        beta: &Tensor<F>,
        running_mean: &[F],
        running_var: &[F],
        axis: usize,
        train: bool,
        eps: F,
    ) -> Result<(Tensor<F>, Option<BatchStats<F>>)> {
        if axis >= x.rank() {
            return Err(TensorError::InvalidArg {
                op: "batchnorm",
                details: format!("axis {axis} out of range for shape {:?}", x.shape()),
            });
        }
        let c = x.shape()[axis];
        if gamma.numel() != c || beta.numel() != c || running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm",
                details: format!("{c} channels vs gamma {} / beta {}", gamma.numel(), beta.numel()),
            });
        }
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let channel_of = move |i: usize| (i / inner) % c;
        let n_per = x.numel() / c;
        let n_f = F::cast_usize(n_per);

        let (mean, var) = if train {
            let mut mean = vec![F::zero(); c];
            for (i, &v) in x.data().iter().enumerate() {
                let ch = channel_of(i);
                mean[ch] = mean[ch] + v;
            }
            for m in &mut mean {
                *m = *m / n_f;
            }
            let mut var = vec![F::zero(); c];
            for (i, &v) in x.data().iter().enumerate() {
                let ch = channel_of(i);
                let d = v - mean[ch];
                var[ch] = var[ch] + d * d;
            }
            for v in &mut var {
                *v = *v / n_f;
            }
            (mean, var)
        } else {
            (running_mean.to_vec(), running_var.to_vec())
        };

        let invstd: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![F::zero(); x.numel()];
        let mut data = vec![F::zero(); x.numel()];
        for (i, &v) in x.data().iter().enumerate() {
            let ch = channel_of(i);
            let h = (v - mean[ch]) * invstd[ch];
            xhat[i] = h;
            data[i] = gamma.data()[ch] * h + beta.data()[ch];
        }
        let out = Tensor::new(x.shape().to_vec(), data);
        let stats = train.then(|| BatchStats { mean: mean.clone(), var: var.clone() });

        let out = self.emit(&[x, gamma, beta], out, || {
            let gamma = gamma.detached();
            let invstd = invstd.clone();
            Box::new(move |g| {
                let mut dbeta = vec![F::zero(); c];
                let mut dgamma = vec![F::zero(); c];
                for (i, &gv) in g.data().iter().enumerate() {
                    let ch = channel_of(i);
                    dbeta[ch] = dbeta[ch] + gv;
                    dgamma[ch] = dgamma[ch] + gv * xhat[i];
                }
                let mut dx = vec![F::zero(); g.numel()];
                if train {
                    for (i, &gv) in g.data().iter().enumerate() {
                        let ch = channel_of(i);
                        let term = n_f * gv - dbeta[ch] - xhat[i] * dgamma[ch];
                        dx[i] = gamma.data()[ch] * invstd[ch] / n_f * term;
                    }
                } else {
                    for (i, &gv) in g.data().iter().enumerate() {
                        let ch = channel_of(i);
                        dx[i] = gv * gamma.data()[ch] * invstd[ch];
                    }
                }
                vec![
                    Tensor::new(g.shape().to_vec(), dx),
                    Tensor::new(vec![c], dgamma),
                    Tensor::new(vec![c], dbeta),
                ]
            })
        });
        Ok((out, stats))
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward<F: Scalar>(
    x: &[F],
    k: &[F],
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Vec<F> {
    let mut out = vec![F::zero(); oh * ow * cout];
    for i in 0..oh {
        let ih0 = (i * stride.0) as isize - pad.0 as isize;
        for j in 0..ow {
            let iw0 = (j * stride.1) as isize - pad.1 as isize;
            let orow = &mut out[(i * ow + j) * cout..(i * ow + j + 1) * cout];
            for di in 0..kh {
                let ih = ih0 + di as isize;
                if ih < 0 || ih >= h as isize {
                    continue;
                }
                for dj in 0..kw {
                    let iw = iw0 + dj as isize;
                    if iw < 0 || iw >= w as isize {
                        continue;
                    }
                    let xbase = ((ih as usize) * w + iw as usize) * cin;
                    let kbase = (di * kw + dj) * cin * cout;
                    for ci in 0..cin {
                        let xv = x[xbase + ci];
                        let krow = &k[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for co in 0..cout {
                            orow[co] = orow[co] + xv * krow[co];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<F: Scalar>(
    x: &[F],
    k: &[F],
    g: &[F],
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    stride: (usize, usize),
    pad: (usize, usize),
) -> (Vec<F>, Vec<F>) {
    let mut dx = vec![F::zero(); h * w * cin];
    let mut dk = vec![F::zero(); kh * kw * cin * cout];
    for i in 0..oh {
        let ih0 = (i * stride.0) as isize - pad.0 as isize;
        for j in 0..ow {
            let iw0 = (j * stride.1) as isize - pad.1 as isize;
            let grow = &g[(i * ow + j) * cout..(i * ow + j + 1) * cout];
            for di in 0..kh {
                let ih = ih0 + di as isize;
                if ih < 0 || ih >= h as isize {
                    continue;
                }
                for dj in 0..kw {
                    let iw = iw0 + dj as isize;
                    if iw < 0 || iw >= w as isize {
                        continue;
                    }
                    let xbase = ((ih as usize) * w + iw as usize) * cin;
                    let kbase = (di * kw + dj) * cin * cout;
                    for ci in 0..cin {
                        let xv = x[xbase + ci];
                        let koff = kbase + ci * cout;
                        let mut acc = F::zero();
                        for co in 0..cout {
                            let gv = grow[co];
                            acc = acc + k[koff + co] * gv;
                            dk[koff + co] = dk[koff + co] + xv * gv;
                        }
                        dx[xbase + ci] = dx[xbase + ci] + acc;
                    }
                }
            }
        }
    }
    (dx, dk)
}
