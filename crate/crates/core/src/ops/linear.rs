use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::conv1d::affine_rows;

pub(crate) fn check_fc<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<(usize, usize, usize)> {
    const OP: &str = "fc";
    if x.rank() != 2 {
        return Err(shape_err(OP, format!("input must be [B,C_in], got {:?}", x.shape())));
    }
    let (rows, c_in) = (x.dim(0), x.dim(1));
    if w.rank() != 2 || w.dim(1) != c_in {
        return Err(shape_err(OP, format!("weight must be [C_out,{c_in}], got {:?}", w.shape())));
    }
    let c_out = w.dim(0);
    if b.shape() != [c_out] {
        return Err(shape_err(OP, format!("bias must be [{c_out}], got {:?}", b.shape())));
    }
    Ok((rows, c_in, c_out))
}

/// `[B, C_in] -> [B, C_out]` affine map `x W^T + b`.
pub fn fc_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (rows, c_in, c_out) = check_fc(x, w, b)?;
    Tensor::new([rows, c_out], affine_rows(x.data(), rows, c_in, w.data(), b.data(), c_out))
}
