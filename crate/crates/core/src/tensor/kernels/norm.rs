use crate::tensor::Scalar;

/// Normalizes contiguous rows of length `c` and applies a per-column affine map.
/// Writes the per-row mean and reciprocal standard deviation for the backward pass.
pub fn layer_norm_forward<T: Scalar>(
    x: &[T],
    c: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
    y: &mut [T],
    mean: &mut [T],
    rstd: &mut [T],
) {
    let inv_c = T::one() / T::lit(c as f64);
    for (r, (xr, yr)) in x.chunks_exact(c).zip(y.chunks_exact_mut(c)).enumerate() {
        let mu = xr.iter().copied().sum::<T>() * inv_c;
        let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_c;
        let rs = T::one() / (var + eps).sqrt();
        for i in 0..c {
            yr[i] = (xr[i] - mu) * rs * gamma[i] + beta[i];
        }
        mean[r] = mu;
        rstd[r] = rs;
    }
}

/// Accumulates input, scale and shift gradients of [`layer_norm_forward`].
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Scalar>(
    x: &[T],
    gy: &[T],
    c: usize,
    gamma: &[T],
    mean: &[T],
    rstd: &[T],
    gx: Option<&mut [T]>,
    ggamma: Option<&mut [T]>,
    gbeta: Option<&mut [T]>,
) {
    let inv_c = T::one() / T::lit(c as f64);
    if let Some(gx) = gx {
        for (r, ((xr, gr), gxr)) in x
            .chunks_exact(c)
            .zip(gy.chunks_exact(c))
            .zip(gx.chunks_exact_mut(c))
            .enumerate()
        {
            let (mu, rs) = (mean[r], rstd[r]);
            let mut m1 = T::zero();
            let mut m2 = T::zero();
            for i in 0..c {
                let gxh = gr[i] * gamma[i];
                m1 += gxh;
                m2 += gxh * (xr[i] - mu) * rs;
            }
            m1 *= inv_c;
            m2 *= inv_c;
            for i in 0..c {
                let xh = (xr[i] - mu) * rs;
                gxr[i] += rs * (gr[i] * gamma[i] - m1 - xh * m2);
            }
        }
    }
    if let Some(gg) = ggamma {
        for (r, (xr, gr)) in x.chunks_exact(c).zip(gy.chunks_exact(c)).enumerate() {
            for i in 0..c {
                gg[i] += gr[i] * (xr[i] - mean[r]) * rstd[r];
            }
        }
    }
    if let Some(gb) = gbeta {
        for gr in gy.chunks_exact(c) {
            for i in 0..c {
                gb[i] += gr[i];
            }
        }
    }
}

/// Group normalization over `[B, C, S]`: statistics per (sample, group) across
/// the group's channels and all `S` spatial positions, affine per channel.
#[allow(clippy::too_many_arguments)]
pub fn group_norm_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    c: usize,
    s: usize,
    groups: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
    y: &mut [T],
    mean: &mut [T],
    rstd: &mut [T],
) {
    let cg = c / groups;
    let n = cg * s;
    let inv_n = T::one() / T::lit(n as f64);
    for b in 0..batch {
        for g in 0..groups {
            let base = (b * c + g * cg) * s;
            let xs = &x[base..base + n];
            let mu = xs.iter().copied().sum::<T>() * inv_n;
            let var = xs.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_n;
            let rs = T::one() / (var + eps).sqrt();
            for cc in 0..cg {
                let ch = g * cg + cc;
                let (ga, be) = (gamma[ch], beta[ch]);
                let off = base + cc * s;
                for i in off..off + s {
                    y[i] = (x[i] - mu) * rs * ga + be;
                }
            }
            mean[b * groups + g] = mu;
            rstd[b * groups + g] = rs;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn group_norm_backward<T: Scalar>(
    x: &[T],
    gy: &[T],
    batch: usize,
    c: usize,
    s: usize,
    groups: usize,
    gamma: &[T],
    mean: &[T],
    rstd: &[T],
    mut gx: Option<&mut [T]>,
    mut ggamma: Option<&mut [T]>,
    mut gbeta: Option<&mut [T]>,
) {
    let cg = c / groups;
    let inv_n = T::one() / T::lit((cg * s) as f64);
    for b in 0..batch {
        for g in 0..groups {
            let (mu, rs) = (mean[b * groups + g], rstd[b * groups + g]);
            let mut m1 = T::zero();
            let mut m2 = T::zero();
            for cc in 0..cg {
                let ch = g * cg + cc;
                let off = (b * c + ch) * s;
                let mut sg = T::zero();
                let mut sgx = T::zero();
                for i in off..off + s {
                    let xh = (x[i] - mu) * rs;
                    sg += gy[i];
                    sgx += gy[i] * xh;
                }
                if let Some(gg) = ggamma.as_deref_mut() {
                    gg[ch] += sgx;
                }
                if let Some(gb) = gbeta.as_deref_mut() {
                    gb[ch] += sg;
                }
                m1 += sg * gamma[ch];
                m2 += sgx * gamma[ch];
            }
            m1 *= inv_n;
            m2 *= inv_n;
            if let Some(gx) = gx.as_deref_mut() {
                for cc in 0..cg {
                    let ch = g * cg + cc;
                    let ga = gamma[ch];
                    let off = (b * c + ch) * s;
                    for i in off..off + s {
                        let xh = (x[i] - mu) * rs;
                        gx[i] += rs * (gy[i] * ga - m1 - xh * m2);
                    }
                }
            }
        }
    }
}
