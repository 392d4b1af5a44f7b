//! Temporal 3D convolution with a `(3,1,1)` kernel.
//!
//! `out[b,o,t,h,w] = sum_k sum_c in[b,c,t+k-1,h,w] * W[o,c,k] + bias[o]`,
//! with zero padding of one step on each side so `T` is preserved.

use crate::error::{shape_err, Error, Result};
use crate::scalar::{gemm, MatView, Scalar};
use crate::tensor::{BackwardOp, Tape, Tensor, Var};

const OP: &str = "conv3d_t311";

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    c_in: usize,
    t: usize,
    plane: usize,
    c_out: usize,
}

fn geometry<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Geometry> {
    if x.rank() != 5 {
        return Err(shape_err(OP, format!("input must be [B,C,T,H,W], got {:?}", x.shape())));
    }
    if w.rank() != 5 {
        return Err(shape_err(OP, format!("weight must be [C_out,C_in,3,1,1], got {:?}", w.shape())));
    }
    if w.dim(3) != 1 || w.dim(4) != 1 {
        return Err(Error::Unsupported {
            op: OP,
            msg: format!("spatial kernel must be 1x1, got {}x{}", w.dim(3), w.dim(4)),
        });
    }
    if w.dim(2) != 3 {
        return Err(Error::Unsupported { op: OP, msg: format!("temporal kernel must be 3, got {}", w.dim(2)) });
    }
    let (batch, c_in, t) = (x.dim(0), x.dim(1), x.dim(2));
    if t < 1 {
        return Err(shape_err(OP, "temporal extent must be at least 1"));
    }
    if w.dim(1) != c_in {
        return Err(shape_err(OP, format!("weight expects {} input channels, input has {c_in}", w.dim(1))));
    }
    let c_out = w.dim(0);
    if b.shape() != [c_out] {
        return Err(shape_err(OP, format!("bias must be [{c_out}], got {:?}", b.shape())));
    }
    Ok(Geometry { batch, c_in, t, plane: x.dim(3) * x.dim(4), c_out })
}

/// Output time range `[lo, hi)` that reads input step `t + k - 1` in bounds.
fn valid_range(t: usize, k: usize) -> (usize, usize) {
    match k {
        0 => (1, t),
        1 => (0, t),
        _ => (0, t.saturating_sub(1)),
    }
}

pub fn conv3d_t311_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let g = geometry(x, w, b)?;
    let row = g.t * g.plane;
    let mut out = vec![S::zero(); g.batch * g.c_out * row];
    for n in 0..g.batch {
        let dst = &mut out[n * g.c_out * row..(n + 1) * g.c_out * row];
        for (o, chunk) in dst.chunks_mut(row).enumerate() {
            chunk.fill(b.data()[o]);
        }
        let src = &x.data()[n * g.c_in * row..(n + 1) * g.c_in * row];
        for k in 0..3 {
            let (lo, hi) = valid_range(g.t, k);
            if lo >= hi {
                continue;
            }
            let shift = lo + k - 1;
            let cols = (hi - lo) * g.plane;
            gemm(
                g.c_out,
                g.c_in,
                cols,
                S::one(),
                w.data(),
                MatView { offset: k, row_stride: 3 * g.c_in, col_stride: 3 },
                src,
                MatView { offset: shift * g.plane, row_stride: row, col_stride: 1 },
                S::one(),
                dst,
                MatView { offset: lo * g.plane, row_stride: row, col_stride: 1 },
            );
        }
    }
    Tensor::new([g.batch, g.c_out, g.t, x.dim(3), x.dim(4)], out)
}

struct Conv3dBackward {
    geometry: Geometry,
}

impl<S: Scalar> BackwardOp<S> for Conv3dBackward {
    fn name(&self) -> &'static str {
        OP
    }

    fn backward(&self, inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let g = &self.geometry;
        let (x, w) = (inputs[0], inputs[1]);
        let row = g.t * g.plane;
        let mut dx = vec![S::zero(); x.numel()];
        let mut dw = vec![S::zero(); w.numel()];
        let mut db = vec![S::zero(); g.c_out];
        for n in 0..g.batch {
            let gout = &grad.data()[n * g.c_out * row..(n + 1) * g.c_out * row];
            let src = &x.data()[n * g.c_in * row..(n + 1) * g.c_in * row];
            let dsrc = &mut dx[n * g.c_in * row..(n + 1) * g.c_in * row];
            for (o, chunk) in gout.chunks(row).enumerate() {
                db[o] += chunk.iter().copied().sum::<S>();
            }
            for k in 0..3 {
                let (lo, hi) = valid_range(g.t, k);
                if lo >= hi {
                    continue;
                }
                let shift = lo + k - 1;
                let cols = (hi - lo) * g.plane;
                // dW[:,:,k] += gout[O, cols] * x_shift[C, cols]^T
                gemm(
                    g.c_out,
                    cols,
                    g.c_in,
                    S::one(),
                    gout,
                    MatView { offset: lo * g.plane, row_stride: row, col_stride: 1 },
                    src,
                    MatView { offset: shift * g.plane, row_stride: 1, col_stride: row },
                    S::one(),
                    &mut dw,
                    MatView { offset: k, row_stride: 3 * g.c_in, col_stride: 3 },
                );
                // dx_shift[C, cols] += W[:,:,k]^T * gout[O, cols]
                gemm(
                    g.c_in,
                    g.c_out,
                    cols,
                    S::one(),
                    w.data(),
                    MatView { offset: k, row_stride: 3, col_stride: 3 * g.c_in },
                    gout,
                    MatView { offset: lo * g.plane, row_stride: row, col_stride: 1 },
                    S::one(),
                    dsrc,
                    MatView { offset: shift * g.plane, row_stride: row, col_stride: 1 },
                );
            }
        }
        vec![
            Some(Tensor::from_vec(x.shape().to_vec(), dx)),
            Some(Tensor::from_vec(w.shape().to_vec(), dw)),
            Some(Tensor::from_vec([g.c_out], db)),
        ]
    }
}

impl<S: Scalar> Tape<S> {
    pub fn conv3d_t311(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let geometry = geometry(self.value(x), self.value(w), self.value(b))?;
        let out = conv3d_t311_forward(self.value(x), self.value(w), self.value(b))?;
        self.push_op(out, &[x, w, b], Conv3dBackward { geometry })
    }
}
