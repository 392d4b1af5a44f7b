use crate::error::{shape_err, Result};
use crate::scalar::{gemm, MatView, Scalar};
use crate::tensor::{BackwardOp, Tape, Tensor, Var};

/// Square stride and zero padding of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dConfig {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dConfig {
    pub fn new(stride: usize, padding: usize) -> Self {
        Conv2dConfig { stride, padding }
    }
}

/// Output extent of a strided, padded window.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || len + 2 * padding < kernel {
        return None;
    }
    Some((len + 2 * padding - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    cfg: Conv2dConfig,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

fn geometry<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: Option<&Tensor<S>>, cfg: Conv2dConfig) -> Result<Geometry> {
    const OP: &str = "conv2d";
    if x.rank() != 4 {
        return Err(shape_err(OP, format!("input must be [B,C,H,W], got {:?}", x.shape())));
    }
    if w.rank() != 4 {
        return Err(shape_err(OP, format!("weight must be [C_out,C_in,kh,kw], got {:?}", w.shape())));
    }
    let (batch, c_in, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (c_out, wc, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    if wc != c_in {
        return Err(shape_err(OP, format!("weight expects {wc} input channels, input has {c_in}")));
    }
    if let Some(b) = b {
        if b.shape() != [c_out] {
            return Err(shape_err(OP, format!("bias must be [{c_out}], got {:?}", b.shape())));
        }
    }
    let ho = conv_out_len(h, kh, cfg.stride, cfg.padding);
    let wo = conv_out_len(wd, kw, cfg.stride, cfg.padding);
    let (Some(ho), Some(wo)) = (ho, wo) else {
        return Err(shape_err(
            OP,
            format!("kernel {kh}x{kw} with {cfg:?} does not fit a {h}x{wd} input"),
        ));
    };
    Ok(Geometry { batch, c_in, h, w: wd, c_out, kh, kw, ho, wo, cfg })
}

/// Unfolds one image `[C,H,W]` into `[C*kh*kw, Ho*Wo]`.
fn im2col<S: Scalar>(img: &[S], g: &Geometry, cols: &mut [S]) {
    let (s, p) = (g.cfg.stride as isize, g.cfg.padding as isize);
    let positions = g.positions();
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oh in 0..g.ho {
                    let ih = oh as isize * s - p + i as isize;
                    let line = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize {
                        line.fill(S::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, out) in line.iter_mut().enumerate() {
                        let iw = ow as isize * s - p + j as isize;
                        *out = if iw < 0 || iw >= g.w as isize { S::zero() } else { src[iw as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Accumulates `[C*kh*kw, Ho*Wo]` columns back into an image `[C,H,W]`.
fn col2im<S: Scalar>(cols: &[S], g: &Geometry, img: &mut [S]) {
    let (s, p) = (g.cfg.stride as isize, g.cfg.padding as isize);
    let positions = g.positions();
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let src = &cols[row * positions..(row + 1) * positions];
                for oh in 0..g.ho {
                    let ih = oh as isize * s - p + i as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.wo {
                        let iw = ow as isize * s - p + j as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] += src[oh * g.wo + ow];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Cross-correlation of `[B,C_in,H,W]` with `[C_out,C_in,kh,kw]`.
pub fn conv2d_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: Option<&Tensor<S>>,
    cfg: Conv2dConfig,
) -> Result<Tensor<S>> {
    let g = geometry(x, w, b, cfg)?;
    let (patch, positions) = (g.patch(), g.positions());
    let mut out = vec![S::zero(); g.batch * g.c_out * positions];
    let mut cols = vec![S::zero(); patch * positions];
    let in_img = g.c_in * g.h * g.w;
    for n in 0..g.batch {
        im2col(&x.data()[n * in_img..(n + 1) * in_img], &g, &mut cols);
        let dst = &mut out[n * g.c_out * positions..(n + 1) * g.c_out * positions];
        if let Some(b) = b {
            for (o, chunk) in dst.chunks_mut(positions).enumerate() {
                chunk.fill(b.data()[o]);
            }
        }
        let beta = if b.is_some() { S::one() } else { S::zero() };
        gemm(
            g.c_out,
            patch,
            positions,
            S::one(),
            w.data(),
            MatView::row_major(patch),
            &cols,
            MatView::row_major(positions),
            beta,
            dst,
            MatView::row_major(positions),
        );
    }
    Tensor::new([g.batch, g.c_out, g.ho, g.wo], out)
}

struct Conv2dBackward {
    geometry: Geometry,
    has_bias: bool,
}

impl<S: Scalar> BackwardOp<S> for Conv2dBackward {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let g = &self.geometry;
        let (x, w) = (inputs[0], inputs[1]);
        let (patch, positions) = (g.patch(), g.positions());
        let in_img = g.c_in * g.h * g.w;
        let out_img = g.c_out * positions;
        let mut dx = vec![S::zero(); x.numel()];
        let mut dw = vec![S::zero(); w.numel()];
        let mut cols = vec![S::zero(); patch * positions];
        let mut dcols = vec![S::zero(); patch * positions];
        for n in 0..g.batch {
            let gout = &grad.data()[n * out_img..(n + 1) * out_img];
            im2col(&x.data()[n * in_img..(n + 1) * in_img], g, &mut cols);
            // dW += gout[O,P] * cols^T[P,CK]
            gemm(
                g.c_out,
                positions,
                patch,
                S::one(),
                gout,
                MatView::row_major(positions),
                &cols,
                MatView::transposed(positions),
                S::one(),
                &mut dw,
                MatView::row_major(patch),
            );
            // dcols = W^T[CK,O] * gout[O,P]
            gemm(
                patch,
                g.c_out,
                positions,
                S::one(),
                w.data(),
                MatView::transposed(patch),
                gout,
                MatView::row_major(positions),
                S::zero(),
                &mut dcols,
                MatView::row_major(positions),
            );
            col2im(&dcols, g, &mut dx[n * in_img..(n + 1) * in_img]);
        }
        let mut grads = vec![
            Some(Tensor::from_vec(x.shape().to_vec(), dx)),
            Some(Tensor::from_vec(w.shape().to_vec(), dw)),
        ];
        if self.has_bias {
            let mut db = vec![S::zero(); g.c_out];
            for n in 0..g.batch {
                for (o, acc) in db.iter_mut().enumerate() {
                    let start = n * out_img + o * positions;
                    *acc += grad.data()[start..start + positions].iter().copied().sum::<S>();
                }
            }
            grads.push(Some(Tensor::from_vec([g.c_out], db)));
        }
        grads
    }
}

impl<S: Scalar> Tape<S> {
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, cfg: Conv2dConfig) -> Result<Var> {
        let bias = b.map(|b| self.value(b));
        let geometry = geometry(self.value(x), self.value(w), bias, cfg)?;
        let out = conv2d_forward(self.value(x), self.value(w), bias, cfg)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push_op(out, &inputs, Conv2dBackward { geometry, has_bias: b.is_some() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_filter_counts_window_cells() {
        let x = Tensor::<f32>::ones([1, 1, 4, 4]);
        let w = Tensor::<f32>::ones([1, 1, 3, 3]);
        let y = conv2d_forward(&x, &w, None, Conv2dConfig::new(1, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(y.at(&[0, 0, 0, 0]), 4.0);
        assert_eq!(y.at(&[0, 0, 0, 3]), 4.0);
        assert_eq!(y.at(&[0, 0, 3, 3]), 4.0);
        assert_eq!(y.at(&[0, 0, 0, 1]), 6.0);
        assert_eq!(y.at(&[0, 0, 1, 1]), 9.0);
        assert_eq!(y.at(&[0, 0, 2, 2]), 9.0);
    }

    #[test]
    fn super_image_stem_shape() {
        let x = Tensor::<f32>::zeros([1, 15, 8, 8]);
        let w = Tensor::<f32>::zeros([64, 15, 7, 7]);
        let y = conv2d_forward(&x, &w, None, Conv2dConfig::new(2, 3)).unwrap();
        assert_eq!(y.shape(), &[1, 64, 4, 4]);
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let x = Tensor::<f32>::zeros([1, 3, 8, 8]);
        let w = Tensor::<f32>::zeros([4, 5, 3, 3]);
        let err = conv2d_forward(&x, &w, None, Conv2dConfig::new(1, 1)).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
    }

    #[test]
    fn kernel_larger_than_padded_input_is_rejected() {
        let x = Tensor::<f32>::zeros([1, 1, 2, 2]);
        let w = Tensor::<f32>::zeros([1, 1, 5, 5]);
        assert!(conv2d_forward(&x, &w, None, Conv2dConfig::new(1, 0)).is_err());
    }

    #[test]
    fn bias_is_added_per_channel() {
        let x = Tensor::<f64>::zeros([2, 1, 3, 3]);
        let w = Tensor::<f64>::ones([2, 1, 1, 1]);
        let b = Tensor::from_vec([2], vec![1.5, -2.0]);
        let y = conv2d_forward(&x, &w, Some(&b), Conv2dConfig::new(1, 0)).unwrap();
        assert_eq!(y.at(&[1, 0, 2, 2]), 1.5);
        assert_eq!(y.at(&[0, 1, 0, 0]), -2.0);
    }
}
