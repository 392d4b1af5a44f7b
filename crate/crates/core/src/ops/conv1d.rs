//! 1D convolutions over feature sequences laid out as `[T, C]` or `[B, T, C]`.
//!
//! * channel-wise: one length-3 kernel per channel, zero padding 1
//!   (`y[i,j] = sum_k x[i+k-1,j] * W[j,k] + b[j]`);
//! * temporal-wise: kernel size 1 mixing all channels at each step
//!   (`y[i,j] = sum_k x[i,k] * W[j,k] + b[j]`);
//! * full: an ordinary kernel-3 convolution mixing channels and time.

use crate::error::{shape_err, Result};
use crate::scalar::{gemm, MatView, Scalar};
use crate::tensor::{BackwardOp, Tape, Tensor, Var};

/// `(batch, steps, channels)` of a sequence tensor.
pub(crate) fn seq_dims<S: Scalar>(op: &'static str, x: &Tensor<S>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [t, c] => Ok((1, t, c)),
        [b, t, c] => Ok((b, t, c)),
        _ => Err(shape_err(op, format!("input must be [T,C] or [B,T,C], got {:?}", x.shape()))),
    }
}

fn with_channels(shape: &[usize], c: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    *s.last_mut().expect("rank >= 2") = c;
    s
}

// ---------------------------------------------------------------------------
// channel-wise

fn check_channelwise<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<(usize, usize, usize)> {
    const OP: &str = "conv1d_channelwise";
    let (batch, t, c) = seq_dims(OP, x)?;
    if w.shape() != [c, 3] {
        return Err(shape_err(OP, format!("weight must be [{c},3] for {c} channels, got {:?}", w.shape())));
    }
    if b.shape() != [c] {
        return Err(shape_err(OP, format!("bias must be [{c}], got {:?}", b.shape())));
    }
    Ok((batch, t, c))
}

pub fn conv1d_channelwise_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (batch, t, c) = check_channelwise(x, w, b)?;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut out = vec![S::zero(); x.numel()];
    for n in 0..batch {
        let base = n * t * c;
        for i in 0..t {
            for j in 0..c {
                let mut acc = bd[j];
                for k in 0..3 {
                    let src = i as isize + k as isize - 1;
                    if src >= 0 && (src as usize) < t {
                        acc += xd[base + src as usize * c + j] * wd[j * 3 + k];
                    }
                }
                out[base + i * c + j] = acc;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

struct ChannelwiseBackward {
    batch: usize,
    t: usize,
    c: usize,
}

impl<S: Scalar> BackwardOp<S> for ChannelwiseBackward {
    fn name(&self) -> &'static str {
        "conv1d_channelwise"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let (batch, t, c) = (self.batch, self.t, self.c);
        let (x, w) = (inputs[0], inputs[1]);
        let (xd, wd, gd) = (x.data(), w.data(), grad.data());
        let mut dx = vec![S::zero(); x.numel()];
        let mut dw = vec![S::zero(); 3 * c];
        let mut db = vec![S::zero(); c];
        for n in 0..batch {
            let base = n * t * c;
            for i in 0..t {
                for j in 0..c {
                    let g = gd[base + i * c + j];
                    db[j] += g;
                    for k in 0..3 {
                        let src = i as isize + k as isize - 1;
                        if src >= 0 && (src as usize) < t {
                            let at = base + src as usize * c + j;
                            dw[j * 3 + k] += g * xd[at];
                            dx[at] += g * wd[j * 3 + k];
                        }
                    }
                }
            }
        }
        vec![
            Some(Tensor::from_vec(x.shape().to_vec(), dx)),
            Some(Tensor::from_vec([c, 3], dw)),
            Some(Tensor::from_vec([c], db)),
        ]
    }
}

// ---------------------------------------------------------------------------
// temporal-wise

fn check_temporalwise<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<(usize, usize, usize)> {
    const OP: &str = "conv1d_temporalwise";
    let (batch, t, c_in) = seq_dims(OP, x)?;
    if w.rank() != 2 || w.dim(1) != c_in {
        return Err(shape_err(OP, format!("weight must be [C_out,{c_in}], got {:?}", w.shape())));
    }
    let c_out = w.dim(0);
    if b.shape() != [c_out] {
        return Err(shape_err(OP, format!("bias must be [{c_out}], got {:?}", b.shape())));
    }
    Ok((batch * t, c_in, c_out))
}

/// `rows x c_in` times `W^T` plus bias, shared by temporal-wise conv and fc.
pub(crate) fn affine_rows<S: Scalar>(x: &[S], rows: usize, c_in: usize, w: &[S], b: &[S], c_out: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(rows * c_out);
    for _ in 0..rows {
        out.extend_from_slice(b);
    }
    gemm(
        rows,
        c_in,
        c_out,
        S::one(),
        x,
        MatView::row_major(c_in),
        w,
        MatView::transposed(c_in),
        S::one(),
        &mut out,
        MatView::row_major(c_out),
    );
    out
}

/// Gradients of `y = x W^T + b` for `rows` rows.
pub(crate) fn affine_rows_backward<S: Scalar>(
    x: &[S],
    rows: usize,
    c_in: usize,
    w: &[S],
    c_out: usize,
    grad: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let mut dx = vec![S::zero(); rows * c_in];
    let mut dw = vec![S::zero(); c_out * c_in];
    let mut db = vec![S::zero(); c_out];
    gemm(
        rows,
        c_out,
        c_in,
        S::one(),
        grad,
        MatView::row_major(c_out),
        w,
        MatView::row_major(c_in),
        S::zero(),
        &mut dx,
        MatView::row_major(c_in),
    );
    gemm(
        c_out,
        rows,
        c_in,
        S::one(),
        grad,
        MatView::transposed(c_out),
        x,
        MatView::row_major(c_in),
        S::zero(),
        &mut dw,
        MatView::row_major(c_in),
    );
    for row in grad.chunks(c_out) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    (dx, dw, db)
}

pub fn conv1d_temporalwise_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (rows, c_in, c_out) = check_temporalwise(x, w, b)?;
    let out = affine_rows(x.data(), rows, c_in, w.data(), b.data(), c_out);
    Tensor::new(with_channels(x.shape(), c_out), out)
}

struct AffineBackward {
    name: &'static str,
    rows: usize,
    c_in: usize,
    c_out: usize,
}

impl<S: Scalar> BackwardOp<S> for AffineBackward {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (dx, dw, db) = affine_rows_backward(x.data(), self.rows, self.c_in, w.data(), self.c_out, grad.data());
        vec![
            Some(Tensor::from_vec(x.shape().to_vec(), dx)),
            Some(Tensor::from_vec(w.shape().to_vec(), dw)),
            Some(Tensor::from_vec([self.c_out], db)),
        ]
    }
}

// ---------------------------------------------------------------------------
// full kernel-3

fn check_full<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<(usize, usize, usize, usize)> {
    const OP: &str = "conv1d";
    let (batch, t, c_in) = seq_dims(OP, x)?;
    if w.rank() != 3 || w.dim(1) != c_in || w.dim(2) != 3 {
        return Err(shape_err(OP, format!("weight must be [C_out,{c_in},3], got {:?}", w.shape())));
    }
    let c_out = w.dim(0);
    if b.shape() != [c_out] {
        return Err(shape_err(OP, format!("bias must be [{c_out}], got {:?}", b.shape())));
    }
    Ok((batch, t, c_in, c_out))
}

/// Output row range `[lo, hi)` whose tap `k` reads an in-bounds step.
fn tap_range(t: usize, k: usize) -> (usize, usize) {
    match k {
        0 => (1, t),
        1 => (0, t),
        _ => (0, t.saturating_sub(1)),
    }
}

pub fn conv1d_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (batch, t, c_in, c_out) = check_full(x, w, b)?;
    let mut out = Vec::with_capacity(batch * t * c_out);
    for _ in 0..batch * t {
        out.extend_from_slice(b.data());
    }
    for n in 0..batch {
        for k in 0..3 {
            let (lo, hi) = tap_range(t, k);
            if lo >= hi {
                continue;
            }
            let src = lo + k - 1;
            gemm(
                hi - lo,
                c_in,
                c_out,
                S::one(),
                x.data(),
                MatView { offset: (n * t + src) * c_in, row_stride: c_in, col_stride: 1 },
                w.data(),
                MatView { offset: k, row_stride: 3, col_stride: 3 * c_in },
                S::one(),
                &mut out,
                MatView { offset: (n * t + lo) * c_out, row_stride: c_out, col_stride: 1 },
            );
        }
    }
    Tensor::new(with_channels(x.shape(), c_out), out)
}

struct Conv1dBackward {
    batch: usize,
    t: usize,
    c_in: usize,
    c_out: usize,
}

impl<S: Scalar> BackwardOp<S> for Conv1dBackward {
    fn name(&self) -> &'static str {
        "conv1d"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let (batch, t, c_in, c_out) = (self.batch, self.t, self.c_in, self.c_out);
        let (x, w) = (inputs[0], inputs[1]);
        let mut dx = vec![S::zero(); x.numel()];
        let mut dw = vec![S::zero(); w.numel()];
        let mut db = vec![S::zero(); c_out];
        for row in grad.data().chunks(c_out) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        for n in 0..batch {
            for k in 0..3 {
                let (lo, hi) = tap_range(t, k);
                if lo >= hi {
                    continue;
                }
                let src = lo + k - 1;
                let rows = hi - lo;
                // dW[:,:,k] += gout[rows,O]^T * x_src[rows,C]
                gemm(
                    c_out,
                    rows,
                    c_in,
                    S::one(),
                    grad.data(),
                    MatView { offset: (n * t + lo) * c_out, row_stride: 1, col_stride: c_out },
                    x.data(),
                    MatView { offset: (n * t + src) * c_in, row_stride: c_in, col_stride: 1 },
                    S::one(),
                    &mut dw,
                    MatView { offset: k, row_stride: 3 * c_in, col_stride: 3 },
                );
                // dx_src[rows,C] += gout[rows,O] * W[:,:,k]
                gemm(
                    rows,
                    c_out,
                    c_in,
                    S::one(),
                    grad.data(),
                    MatView { offset: (n * t + lo) * c_out, row_stride: c_out, col_stride: 1 },
                    w.data(),
                    MatView { offset: k, row_stride: 3 * c_in, col_stride: 3 },
                    S::one(),
                    &mut dx,
                    MatView { offset: (n * t + src) * c_in, row_stride: c_in, col_stride: 1 },
                );
            }
        }
        vec![
            Some(Tensor::from_vec(x.shape().to_vec(), dx)),
            Some(Tensor::from_vec(w.shape().to_vec(), dw)),
            Some(Tensor::from_vec([c_out], db)),
        ]
    }
}

impl<S: Scalar> Tape<S> {
    pub fn conv1d_channelwise(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, t, c) = check_channelwise(self.value(x), self.value(w), self.value(b))?;
        let out = conv1d_channelwise_forward(self.value(x), self.value(w), self.value(b))?;
        self.push_op(out, &[x, w, b], ChannelwiseBackward { batch, t, c })
    }

    pub fn conv1d_temporalwise(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, c_in, c_out) = check_temporalwise(self.value(x), self.value(w), self.value(b))?;
        let out = conv1d_temporalwise_forward(self.value(x), self.value(w), self.value(b))?;
        self.push_op(out, &[x, w, b], AffineBackward { name: "conv1d_temporalwise", rows, c_in, c_out })
    }

    /// Ordinary kernel-3 1D convolution, weight `[C_out, C_in, 3]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, t, c_in, c_out) = check_full(self.value(x), self.value(w), self.value(b))?;
        let out = conv1d_forward(self.value(x), self.value(w), self.value(b))?;
        self.push_op(out, &[x, w, b], Conv1dBackward { batch, t, c_in, c_out })
    }

    pub fn fc(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, c_in, c_out) = super::linear::check_fc(self.value(x), self.value(w), self.value(b))?;
        let out = super::linear::fc_forward(self.value(x), self.value(w), self.value(b))?;
        self.push_op(out, &[x, w, b], AffineBackward { name: "fc", rows, c_in, c_out })
    }
}
