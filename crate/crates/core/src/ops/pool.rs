use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{BackwardOp, Tape, Tensor, Var};

use super::conv1d::seq_dims;
use super::conv2d::conv_out_len;

fn nchw<S: Scalar>(op: &'static str, x: &Tensor<S>) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [b, c, h, w] if h >= 1 && w >= 1 => Ok((b, c, h, w)),
        _ => Err(shape_err(op, format!("input must be [B,C,H,W] with H,W >= 1, got {:?}", x.shape()))),
    }
}

/// `[B,C,H,W] -> [B,C]` spatial mean.
pub fn global_avg_pool2d_forward<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (b, c, h, w) = nchw("global_avg_pool2d", x)?;
    let area = S::from_usize_lossy(h * w);
    let data = x.data().chunks(h * w).map(|plane| plane.iter().copied().sum::<S>() / area).collect();
    Tensor::new([b, c], data)
}

struct GapBackward {
    area: usize,
}

impl<S: Scalar> BackwardOp<S> for GapBackward {
    fn name(&self) -> &'static str {
        "global_avg_pool2d"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let scale = S::one() / S::from_usize_lossy(self.area);
        let mut dx = Vec::with_capacity(inputs[0].numel());
        for &g in grad.data() {
            dx.extend(std::iter::repeat_n(g * scale, self.area));
        }
        vec![Some(Tensor::from_vec(inputs[0].shape().to_vec(), dx))]
    }
}

/// `[T,C] -> [C]` or `[B,T,C] -> [B,C]` max over time; ties resolve to the
/// earliest step.
pub fn temporal_max_pool_forward<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    Ok(temporal_max_pool_impl(x)?.0)
}

fn temporal_max_pool_impl<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<usize>)> {
    const OP: &str = "temporal_max_pool";
    let (batch, t, c) = seq_dims(OP, x)?;
    if t < 1 {
        return Err(shape_err(OP, "sequence must have at least one step"));
    }
    let xd = x.data();
    let mut out = Vec::with_capacity(batch * c);
    let mut argmax = Vec::with_capacity(batch * c);
    for n in 0..batch {
        for j in 0..c {
            let mut best = n * t * c + j;
            for i in 1..t {
                let at = (n * t + i) * c + j;
                if xd[at] > xd[best] {
                    best = at;
                }
            }
            out.push(xd[best]);
            argmax.push(best);
        }
    }
    let shape = if x.rank() == 2 { vec![c] } else { vec![batch, c] };
    Ok((Tensor::new(shape, out)?, argmax))
}

struct ArgmaxBackward {
    name: &'static str,
    argmax: Vec<usize>,
}

impl<S: Scalar> BackwardOp<S> for ArgmaxBackward {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let mut dx = vec![S::zero(); inputs[0].numel()];
        for (&src, &g) in self.argmax.iter().zip(grad.data()) {
            dx[src] += g;
        }
        vec![Some(Tensor::from_vec(inputs[0].shape().to_vec(), dx))]
    }
}

/// Square max pooling with implicit `-inf` padding; ties pick the first
/// window element in row-major order.
pub fn max_pool2d_forward<S: Scalar>(x: &Tensor<S>, kernel: usize, stride: usize, padding: usize) -> Result<Tensor<S>> {
    Ok(max_pool2d_impl(x, kernel, stride, padding)?.0)
}

fn max_pool2d_impl<S: Scalar>(
    x: &Tensor<S>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<S>, Vec<usize>)> {
    const OP: &str = "max_pool2d";
    let (b, c, h, w) = nchw(OP, x)?;
    if padding >= kernel {
        return Err(shape_err(OP, "padding must be smaller than the kernel"));
    }
    let (Some(ho), Some(wo)) = (conv_out_len(h, kernel, stride, padding), conv_out_len(w, kernel, stride, padding)) else {
        return Err(shape_err(OP, format!("window {kernel} does not fit {h}x{w}")));
    };
    let xd = x.data();
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut argmax = Vec::with_capacity(b * c * ho * wo);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best: Option<usize> = None;
                for i in 0..kernel {
                    let ih = (oh * stride + i) as isize - padding as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for j in 0..kernel {
                        let iw = (ow * stride + j) as isize - padding as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let at = base + ih as usize * w + iw as usize;
                        if best.is_none_or(|b| xd[at] > xd[b]) {
                            best = Some(at);
                        }
                    }
                }
                let best = best.expect("padding < kernel keeps every window non-empty");
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new([b, c, ho, wo], out)?, argmax))
}

impl<S: Scalar> Tape<S> {
    pub fn global_avg_pool2d(&mut self, x: Var) -> Result<Var> {
        let out = global_avg_pool2d_forward(self.value(x))?;
        let (_, _, h, w) = nchw("global_avg_pool2d", self.value(x))?;
        self.push_op(out, &[x], GapBackward { area: h * w })
    }

    pub fn temporal_max_pool(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = temporal_max_pool_impl(self.value(x))?;
        self.push_op(out, &[x], ArgmaxBackward { name: "temporal_max_pool", argmax })
    }

    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let (out, argmax) = max_pool2d_impl(self.value(x), kernel, stride, padding)?;
        self.push_op(out, &[x], ArgmaxBackward { name: "max_pool2d", argmax })
    }
}
