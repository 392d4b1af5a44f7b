//! Naive nested-loop reference implementations used as oracles.
//!
//! Written directly from the op definitions, with no shared code with the
//! library kernels.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stnet::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

pub fn conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, c, h, wd] = x.shape().try_into().unwrap();
    let [o, _, kh, kw] = w.shape().try_into().unwrap();
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut y = Tensor::zeros([n, o, ho, wo]);
    for bi in 0..n {
        for oc in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[oc]);
                    for ic in 0..c {
                        for p in 0..kh {
                            for q in 0..kw {
                                let r = (i * stride + p) as isize - pad as isize;
                                let s = (j * stride + q) as isize - pad as isize;
                                if r >= 0 && s >= 0 && (r as usize) < h && (s as usize) < wd {
                                    acc += x.at(&[bi, ic, r as usize, s as usize]) * w.at(&[oc, ic, p, q]);
                                }
                            }
                        }
                    }
                    y.set(&[bi, oc, i, j], acc);
                }
            }
        }
    }
    y
}

pub fn conv3d_t311(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, t, h, wd] = x.shape().try_into().unwrap();
    let o = w.dim(0);
    let mut y = Tensor::zeros([n, o, t, h, wd]);
    for bi in 0..n {
        for oc in 0..o {
            for ti in 0..t {
                for i in 0..h {
                    for j in 0..wd {
                        let mut acc = b.data()[oc];
                        for k in 0..3 {
                            let src = ti as isize + k as isize - 1;
                            if src < 0 || src as usize >= t {
                                continue;
                            }
                            for ic in 0..c {
                                acc += x.at(&[bi, ic, src as usize, i, j]) * w.at(&[oc, ic, k, 0, 0]);
                            }
                        }
                        y.set(&[bi, oc, ti, i, j], acc);
                    }
                }
            }
        }
    }
    y
}

/// `[T,C]` sequence.
pub fn channelwise(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let [t, c] = x.shape().try_into().unwrap();
    let mut y = Tensor::zeros([t, c]);
    for i in 0..t {
        for j in 0..c {
            let mut acc = b.data()[j];
            for k in 0..3 {
                let src = i as isize + k as isize - 1;
                if src >= 0 && (src as usize) < t {
                    acc += x.at(&[src as usize, j]) * w.at(&[j, k]);
                }
            }
            y.set(&[i, j], acc);
        }
    }
    y
}

/// `[T,C_in] x [C_out,C_in]^T + b`, also the fc oracle.
pub fn matmul_bias(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let [t, ci] = x.shape().try_into().unwrap();
    let co = w.dim(0);
    let mut y = Tensor::zeros([t, co]);
    for i in 0..t {
        for j in 0..co {
            let mut acc = b.data()[j];
            for k in 0..ci {
                acc += x.at(&[i, k]) * w.at(&[j, k]);
            }
            y.set(&[i, j], acc);
        }
    }
    y
}

/// `[T,C_in]` with weight `[C_out,C_in,3]`.
pub fn conv1d_full(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let [t, ci] = x.shape().try_into().unwrap();
    let co = w.dim(0);
    let mut y = Tensor::zeros([t, co]);
    for i in 0..t {
        for o in 0..co {
            let mut acc = b.data()[o];
            for k in 0..3 {
                let src = i as isize + k as isize - 1;
                if src < 0 || src as usize >= t {
                    continue;
                }
                for c in 0..ci {
                    acc += x.at(&[src as usize, c]) * w.at(&[o, c, k]);
                }
            }
            y.set(&[i, o], acc);
        }
    }
    y
}

/// Channel axis 1 of `[N, C, rest...]`. `stats = None` means batch statistics.
pub fn batch_norm(
    x: &Tensor<f64>,
    alpha: &Tensor<f64>,
    beta: &Tensor<f64>,
    stats: Option<(&Tensor<f64>, &Tensor<f64>)>,
    eps: f64,
) -> Tensor<f64> {
    let n = x.dim(0);
    let c = x.dim(1);
    let inner: usize = x.shape()[2..].iter().product();
    let idx = |b: usize, ch: usize, p: usize| (b * c + ch) * inner + p;
    let mut y = x.clone();
    for ch in 0..c {
        let (mean, var) = match stats {
            Some((m, v)) => (m.data()[ch], v.data()[ch]),
            None => {
                let vals: Vec<f64> = (0..n).flat_map(|b| (0..inner).map(move |p| (b, p))).map(|(b, p)| x.data()[idx(b, ch, p)]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
                (mean, var)
            }
        };
        for b in 0..n {
            for p in 0..inner {
                let i = idx(b, ch, p);
                y.data_mut()[i] = (x.data()[i] - mean) / (var + eps).sqrt() * alpha.data()[ch] + beta.data()[ch];
            }
        }
    }
    y
}

pub fn gap(x: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    let mut y = Tensor::zeros([n, c]);
    for b in 0..n {
        for ch in 0..c {
            let mut acc = 0.0;
            for i in 0..h {
                for j in 0..w {
                    acc += x.at(&[b, ch, i, j]);
                }
            }
            y.set(&[b, ch], acc / (h * w) as f64);
        }
    }
    y
}

/// `[T,C] -> [C]`.
pub fn temporal_max(x: &Tensor<f64>) -> Tensor<f64> {
    let [t, c] = x.shape().try_into().unwrap();
    Tensor::from_fn([c], |j| (0..t).map(|i| x.at(&[i, j])).fold(f64::NEG_INFINITY, f64::max))
}

pub fn max_pool2d(x: &Tensor<f64>, k: usize, s: usize, p: usize) -> Tensor<f64> {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    let ho = (h + 2 * p - k) / s + 1;
    let wo = (w + 2 * p - k) / s + 1;
    let mut y = Tensor::zeros([n, c, ho, wo]);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    for a in 0..k {
                        for d in 0..k {
                            let r = (i * s + a) as isize - p as isize;
                            let q = (j * s + d) as isize - p as isize;
                            if r >= 0 && q >= 0 && (r as usize) < h && (q as usize) < w {
                                best = best.max(x.at(&[b, ch, r as usize, q as usize]));
                            }
                        }
                    }
                    y.set(&[b, ch, i, j], best);
                }
            }
        }
    }
    y
}

pub fn rel_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) -> bool {
    a.shape() == b.shape() && a.max_rel_diff(b, 1e-8) <= tol
}
