//! Slice-level forward and backward kernels. Every kernel fixes its summation
//! order, so results are bit-reproducible for identical inputs.

mod attention;
mod conv;
mod matmul;
mod norm;
mod upsample;

pub use attention::{attention_backward, attention_forward, AttentionGeom, BiasRef};
pub use conv::{conv3d_backward_input, conv3d_backward_weight, conv3d_forward, ConvGeom};
pub use matmul::{dot, matmul, matmul_a_bt, matmul_at_b};
pub use norm::{group_norm_backward, group_norm_forward, layer_norm_backward, layer_norm_forward};
pub use upsample::{trilinear_backward, trilinear_forward, AxisInterp};

use super::Scalar;

/// Row-wise softmax over contiguous rows of length `n`.
pub fn softmax_rows<T: Scalar>(x: &[T], n: usize, out: &mut [T]) {
    for (xr, yr) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        softmax_row(xr, yr);
    }
}

#[inline]
pub fn softmax_row<T: Scalar>(x: &[T], y: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for (yi, &xi) in y.iter_mut().zip(x) {
        // exp(-inf - m) is exactly 0, so masked logits carry no weight.
        let e = (xi - m).exp();
        *yi = e;
        s += e;
    }
    let inv = T::one() / s;
    for yi in y.iter_mut() {
        *yi *= inv;
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
