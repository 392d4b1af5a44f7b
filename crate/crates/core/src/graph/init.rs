//! Parameter groups and their initialization schemes.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Result};
use crate::ops::BN_EPS;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Affine and running statistics of one BN layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnParams<S: Scalar> {
    pub alpha: Tensor<S>,
    pub beta: Tensor<S>,
    pub mean: Tensor<S>,
    pub var: Tensor<S>,
}

impl<S: Scalar> BnParams<S> {
    /// `alpha = 1, beta = 0, mean = 0, var = 1 - eps`: the identity in
    /// inference mode.
    pub fn identity(c: usize) -> Self {
        BnParams {
            alpha: Tensor::ones([c]),
            beta: Tensor::zeros([c]),
            mean: Tensor::zeros([c]),
            var: Tensor::full([c], S::lit(1.0 - BN_EPS)),
        }
    }

    /// Standard fresh-layer statistics (`var = 1`).
    pub fn fresh(c: usize) -> Self {
        BnParams { var: Tensor::ones([c]), ..Self::identity(c) }
    }
}

/// Depthwise kernel-3 temporal conv: `W[C,3]`, `b[C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelwiseParams<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

/// Pointwise temporal conv: `W[C_out,C_in]`, `b[C_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalwiseParams<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

/// `(3,1,1)` 3D conv: `W[C_out,C_in,3,1,1]`, `b[C_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalConv3dParams<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

/// Zero-mean normal with std `sqrt(2 / fan_in)`.
pub fn he_normal<S: Scalar>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<S> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| {
        let z: f64 = StandardNormal.sample(rng);
        S::lit(z * std)
    })
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_fan_in<S: Scalar>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<S> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| S::lit(rng.random_range(-bound..=bound)))
}

/// Replicates a `[C_out,3,kh,kw]` kernel `n` times along the input channels
/// and divides by `n`, giving `[C_out,3n,kh,kw]`.
pub fn inflate_first_conv<S: Scalar>(weight2d: &Tensor<S>, n: usize) -> Result<Tensor<S>> {
    let [c_out, 3, kh, kw] = *weight2d.shape() else {
        return Err(shape_err("inflate_first_conv", format!("expected [C_out,3,kh,kw], got {:?}", weight2d.shape())));
    };
    if n == 0 {
        return Err(shape_err("inflate_first_conv", "N must be at least 1"));
    }
    let inv = S::one() / S::from_usize_lossy(n);
    let plane = kh * kw;
    let src = weight2d.data();
    let mut out = Vec::with_capacity(c_out * 3 * n * plane);
    for o in 0..c_out {
        let kernel = &src[o * 3 * plane..(o + 1) * 3 * plane];
        for _ in 0..n {
            out.extend(kernel.iter().map(|&v| if n == 1 { v } else { v * inv }));
        }
    }
    Tensor::new([c_out, 3 * n, kh, kw], out)
}

/// TM block at init: all conv weights `1/(3 C_in)`, zero bias, identity BN.
pub fn init_tm_block<S: Scalar>(c_in: usize, c_out: usize) -> (TemporalConv3dParams<S>, BnParams<S>) {
    let w = S::one() / S::from_usize_lossy(3 * c_in);
    let conv = TemporalConv3dParams { weight: Tensor::full([c_out, c_in, 3, 1, 1], w), bias: Tensor::zeros([c_out]) };
    (conv, BnParams::identity(c_out))
}
