use crate::tensor::Scalar;

/// Dot product with four interleaved partial sums.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// `out[m, n] += a[m, k] * b[k, n]`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let ar = &a[i * k..][..k];
        let or = &mut out[i * n..][..n];
        for (p, &av) in ar.iter().enumerate() {
            if av != T::zero() {
                axpy(av, &b[p * n..][..n], or);
            }
        }
    }
}

/// `out[k, n] += a[m, k]^T * b[m, n]`.
pub fn matmul_at_b<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for r in 0..m {
        let ar = &a[r * k..][..k];
        let br = &b[r * n..][..n];
        for (i, &av) in ar.iter().enumerate() {
            if av != T::zero() {
                axpy(av, br, &mut out[i * n..][..n]);
            }
        }
    }
}

/// `out[m, k] += a[m, n] * b[k, n]^T`.
pub fn matmul_a_bt<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize, out: &mut [T]) {
    for i in 0..m {
        let ar = &a[i * n..][..n];
        let or = &mut out[i * k..][..k];
        for (j, o) in or.iter_mut().enumerate() {
            *o += dot(ar, &b[j * n..][..n]);
        }
    }
}
