//! Element types a [`Tensor`](crate::Tensor) can hold.
//!
//! Everything numeric in the crate is written against [`Scalar`]. `f32` is
//! the training type; `f64` is used by the gradient checker, where central
//! differences need the extra mantissa.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    /// Strided general matrix multiply: `C = alpha * A * B + beta * C`.
    ///
    /// # Safety
    ///
    /// Every index `off + i * rs + j * cs` reachable for the given sizes must
    /// lie inside the corresponding buffer. Use [`gemm`] for a checked
    /// wrapper.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// A strided view onto a flat buffer, used to describe GEMM operands.
#[derive(Clone, Copy, Debug)]
pub struct MatView {
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl MatView {
    /// Contiguous row-major `[rows, cols]` matrix.
    pub fn row_major(cols: usize) -> Self {
        MatView { offset: 0, row_stride: cols, col_stride: 1 }
    }

    /// Transposed view of a contiguous row-major `[cols, rows]` matrix.
    pub fn transposed(stored_cols: usize) -> Self {
        MatView { offset: 0, row_stride: 1, col_stride: stored_cols }
    }

    pub fn at(mut self, offset: usize) -> Self {
        self.offset = offset;
        self
    }

    fn last_index(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return self.offset;
        }
        self.offset + (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
    }
}

/// Bounds-checked `C[m,n] = alpha * A[m,k] * B[k,n] + beta * C[m,n]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    a: &[S],
    av: MatView,
    b: &[S],
    bv: MatView,
    beta: S,
    c: &mut [S],
    cv: MatView,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        // matrixmultiply handles k == 0, but keep the buffers untouched for A/B.
        for i in 0..m {
            for j in 0..n {
                let idx = cv.offset + i * cv.row_stride + j * cv.col_stride;
                c[idx] = if beta == S::zero() { S::zero() } else { beta * c[idx] };
            }
        }
        return;
    }
    assert!(av.last_index(m, k) < a.len(), "gemm: A view out of bounds");
    assert!(bv.last_index(k, n) < b.len(), "gemm: B view out of bounds");
    assert!(cv.last_index(m, n) < c.len(), "gemm: C view out of bounds");
    // SAFETY: the three asserts above cover every index the kernel touches.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.offset),
            av.row_stride as isize,
            av.col_stride as isize,
            b.as_ptr().add(bv.offset),
            bv.row_stride as isize,
            bv.col_stride as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.row_stride as isize,
            cv.col_stride as isize,
        );
    }
}
