//! Batch normalization over one channel axis.
//!
//! The tensor is viewed as `[outer, C, inner]` around `axis`; statistics are
//! per channel over `outer * inner` values. Inference mode evaluates
//! `(u - m) / sqrt(var + eps) * alpha + beta` with the running statistics.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BackwardOp, Tape, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnConfig {
    pub axis: usize,
    pub eps: f64,
    pub mode: Mode,
}

impl BnConfig {
    pub fn new(axis: usize, mode: Mode) -> Self {
        BnConfig { axis, eps: BN_EPS, mode }
    }
}

/// Running mean/variance of one normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<S: Scalar> {
    pub mean: Tensor<S>,
    pub var: Tensor<S>,
}

/// Per-channel statistics of one training batch.
#[derive(Clone, Debug)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    /// Biased variance.
    pub var: Vec<S>,
    pub count: usize,
}

impl<S: Scalar> RunningStats<S> {
    /// `stat <- momentum * stat + (1 - momentum) * batch`, using the unbiased
    /// batch variance when more than one value was seen.
    pub fn update(&mut self, batch: &BatchStats<S>, momentum: f64) {
        let mu = S::lit(momentum);
        let keep = S::one() - mu;
        let correction = if batch.count > 1 {
            S::from_usize_lossy(batch.count) / S::from_usize_lossy(batch.count - 1)
        } else {
            S::one()
        };
        for (m, &b) in self.mean.data_mut().iter_mut().zip(&batch.mean) {
            *m = mu * *m + keep * b;
        }
        for (v, &b) in self.var.data_mut().iter_mut().zip(&batch.var) {
            *v = mu * *v + keep * b * correction;
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    outer: usize,
    channels: usize,
    inner: usize,
}

impl Layout {
    fn count(&self) -> usize {
        self.outer * self.inner
    }

    /// Calls `f(channel, flat_index)` over every element.
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        for o in 0..self.outer {
            for c in 0..self.channels {
                let base = (o * self.channels + c) * self.inner;
                for i in 0..self.inner {
                    f(c, base + i);
                }
            }
        }
    }
}

fn layout<S: Scalar>(x: &Tensor<S>, alpha: &Tensor<S>, beta: &Tensor<S>, axis: usize) -> Result<Layout> {
    const OP: &str = "batch_norm";
    if axis >= x.rank() {
        return Err(shape_err(OP, format!("axis {axis} out of range for shape {:?}", x.shape())));
    }
    let channels = x.dim(axis);
    for (what, t) in [("alpha", alpha), ("beta", beta)] {
        if t.shape() != [channels] {
            return Err(shape_err(OP, format!("{what} must be [{channels}], got {:?}", t.shape())));
        }
    }
    let outer = x.shape()[..axis].iter().product();
    let inner = x.shape()[axis + 1..].iter().product();
    Ok(Layout { outer, channels, inner })
}

struct Forward<S> {
    out: Vec<S>,
    xhat: Vec<S>,
    inv_std: Vec<S>,
    batch: Option<BatchStats<S>>,
}

fn forward<S: Scalar>(
    x: &Tensor<S>,
    alpha: &Tensor<S>,
    beta: &Tensor<S>,
    stats: &RunningStats<S>,
    cfg: BnConfig,
) -> Result<(Layout, Forward<S>)> {
    let l = layout(x, alpha, beta, cfg.axis)?;
    if stats.mean.shape() != [l.channels] || stats.var.shape() != [l.channels] {
        return Err(shape_err("batch_norm", format!("running stats must be [{}]", l.channels)));
    }
    let eps = S::lit(cfg.eps);
    let xd = x.data();
    let (mean, var, batch) = match cfg.mode {
        Mode::Train => {
            let n = l.count();
            if n == 0 {
                return Err(Error::InvalidArgument { op: "batch_norm", msg: "empty batch in train mode".into() });
            }
            let nn = S::from_usize_lossy(n);
            let mut mean = vec![S::zero(); l.channels];
            l.for_each(|c, i| mean[c] += xd[i]);
            mean.iter_mut().for_each(|m| *m /= nn);
            let mut var = vec![S::zero(); l.channels];
            l.for_each(|c, i| {
                let d = xd[i] - mean[c];
                var[c] += d * d;
            });
            var.iter_mut().for_each(|v| *v /= nn);
            let batch = BatchStats { mean: mean.clone(), var: var.clone(), count: n };
            (mean, var, Some(batch))
        }
        Mode::Infer => (stats.mean.data().to_vec(), stats.var.data().to_vec(), None),
    };
    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
    let mut out = vec![S::zero(); x.numel()];
    let mut xhat = vec![S::zero(); x.numel()];
    let (ad, bd) = (alpha.data(), beta.data());
    l.for_each(|c, i| {
        let h = (xd[i] - mean[c]) * inv_std[c];
        xhat[i] = h;
        out[i] = h * ad[c] + bd[c];
    });
    Ok((l, Forward { out, xhat, inv_std, batch }))
}

/// Stateless evaluation; returns the output and, in train mode, the batch
/// statistics the caller should fold into its running stats.
pub fn batch_norm_forward<S: Scalar>(
    x: &Tensor<S>,
    alpha: &Tensor<S>,
    beta: &Tensor<S>,
    stats: &RunningStats<S>,
    cfg: BnConfig,
) -> Result<(Tensor<S>, Option<BatchStats<S>>)> {
    let (_, f) = forward(x, alpha, beta, stats, cfg)?;
    Ok((Tensor::new(x.shape().to_vec(), f.out)?, f.batch))
}

struct BnBackward<S> {
    layout: Layout,
    mode: Mode,
    xhat: Vec<S>,
    inv_std: Vec<S>,
}

impl<S: Scalar> BackwardOp<S> for BnBackward<S> {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let l = self.layout;
        let (x, alpha) = (inputs[0], inputs[1]);
        let (gd, ad) = (grad.data(), alpha.data());
        let mut dalpha = vec![S::zero(); l.channels];
        let mut dbeta = vec![S::zero(); l.channels];
        l.for_each(|c, i| {
            dalpha[c] += gd[i] * self.xhat[i];
            dbeta[c] += gd[i];
        });
        let mut dx = vec![S::zero(); x.numel()];
        match self.mode {
            Mode::Infer => l.for_each(|c, i| dx[i] = gd[i] * ad[c] * self.inv_std[c]),
            Mode::Train => {
                // dx = alpha/std * (g - mean(g) - xhat * mean(g * xhat))
                let nn = S::from_usize_lossy(l.count());
                l.for_each(|c, i| {
                    let g_mean = dbeta[c] / nn;
                    let gx_mean = dalpha[c] / nn;
                    dx[i] = ad[c] * self.inv_std[c] * (gd[i] - g_mean - self.xhat[i] * gx_mean);
                });
            }
        }
        vec![
            Some(Tensor::from_vec(x.shape().to_vec(), dx)),
            Some(Tensor::from_vec([l.channels], dalpha)),
            Some(Tensor::from_vec([l.channels], dbeta)),
        ]
    }
}

impl<S: Scalar> Tape<S> {
    /// Batch normalization; running statistics are read, never written. In
    /// train mode the batch statistics are returned for the caller to apply.
    pub fn batch_norm(
        &mut self,
        x: Var,
        alpha: Var,
        beta: Var,
        stats: &RunningStats<S>,
        cfg: BnConfig,
    ) -> Result<(Var, Option<BatchStats<S>>)> {
        let (layout, f) = forward(self.value(x), self.value(alpha), self.value(beta), stats, cfg)?;
        let shape = self.value(x).shape().to_vec();
        let out = Tensor::new(shape, f.out)?;
        let op = BnBackward { layout, mode: cfg.mode, xhat: f.xhat, inv_std: f.inv_std };
        let v = self.push_op(out, &[x, alpha, beta], op)?;
        Ok((v, f.batch))
    }
}
