use crate::tensor::Scalar;

/// Linear interpolation taps along one axis with half-pixel centers
/// (align-corners = false): source coordinate `(o + 0.5) / scale - 0.5`,
/// clamped at zero, upper neighbour clamped to the last index.
#[derive(Clone, Debug)]
pub struct AxisInterp<T> {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub w_lo: Vec<T>,
    pub w_hi: Vec<T>,
}

impl<T: Scalar> AxisInterp<T> {
    pub fn new(n_in: usize, scale: usize) -> Self {
        let n_out = n_in * scale;
        let mut s = Self {
            lo: Vec::with_capacity(n_out),
            hi: Vec::with_capacity(n_out),
            w_lo: Vec::with_capacity(n_out),
            w_hi: Vec::with_capacity(n_out),
        };
        let inv = 1.0 / scale as f64;
        for o in 0..n_out {
            let src = ((o as f64 + 0.5) * inv - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = if i0 + 1 < n_in { i0 + 1 } else { i0 };
            let l = src - i0 as f64;
            s.lo.push(i0);
            s.hi.push(i1);
            s.w_lo.push(T::lit(1.0 - l));
            s.w_hi.push(T::lit(l));
        }
        s
    }
}

/// Trilinear upsampling of each `[D, H, W]` plane in `x` (`planes` of them).
pub fn trilinear_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    dims: [usize; 3],
    scale: usize,
    y: &mut [T],
) {
    let [d, h, w] = dims;
    let (ad, ah, aw) = (
        AxisInterp::<T>::new(d, scale),
        AxisInterp::<T>::new(h, scale),
        AxisInterp::<T>::new(w, scale),
    );
    let (od, oh, ow) = (d * scale, h * scale, w * scale);
    let isp = d * h * w;
    let osp = od * oh * ow;
    for p in 0..planes {
        let xp = &x[p * isp..][..isp];
        let yp = &mut y[p * osp..][..osp];
        for z in 0..od {
            let (z0, z1, wz0, wz1) = (ad.lo[z], ad.hi[z], ad.w_lo[z], ad.w_hi[z]);
            for r in 0..oh {
                let (r0, r1, wr0, wr1) = (ah.lo[r], ah.hi[r], ah.w_lo[r], ah.w_hi[r]);
                let rows = [
                    (&xp[(z0 * h + r0) * w..][..w], wz0 * wr0),
                    (&xp[(z0 * h + r1) * w..][..w], wz0 * wr1),
                    (&xp[(z1 * h + r0) * w..][..w], wz1 * wr0),
                    (&xp[(z1 * h + r1) * w..][..w], wz1 * wr1),
                ];
                let yr = &mut yp[(z * oh + r) * ow..][..ow];
                for (c, yv) in yr.iter_mut().enumerate() {
                    let (c0, c1, wc0, wc1) = (aw.lo[c], aw.hi[c], aw.w_lo[c], aw.w_hi[c]);
                    let mut acc = T::zero();
                    for (row, wzr) in rows.iter() {
                        acc += *wzr * (wc0 * row[c0] + wc1 * row[c1]);
                    }
                    *yv = acc;
                }
            }
        }
    }
}

/// Adjoint of [`trilinear_forward`]; accumulates into `gx`.
pub fn trilinear_backward<T: Scalar>(
    gy: &[T],
    planes: usize,
    dims: [usize; 3],
    scale: usize,
    gx: &mut [T],
) {
    let [d, h, w] = dims;
    let (ad, ah, aw) = (
        AxisInterp::<T>::new(d, scale),
        AxisInterp::<T>::new(h, scale),
        AxisInterp::<T>::new(w, scale),
    );
    let (od, oh, ow) = (d * scale, h * scale, w * scale);
    let isp = d * h * w;
    let osp = od * oh * ow;
    for p in 0..planes {
        let gxp = &mut gx[p * isp..][..isp];
        let gyp = &gy[p * osp..][..osp];
        for z in 0..od {
            let (z0, z1, wz0, wz1) = (ad.lo[z], ad.hi[z], ad.w_lo[z], ad.w_hi[z]);
            for r in 0..oh {
                let (r0, r1, wr0, wr1) = (ah.lo[r], ah.hi[r], ah.w_lo[r], ah.w_hi[r]);
                let gyr = &gyp[(z * oh + r) * ow..][..ow];
                let targets = [
                    ((z0 * h + r0) * w, wz0 * wr0),
                    ((z0 * h + r1) * w, wz0 * wr1),
                    ((z1 * h + r0) * w, wz1 * wr0),
                    ((z1 * h + r1) * w, wz1 * wr1),
                ];
                for (base, wzr) in targets {
                    for (c, &g) in gyr.iter().enumerate() {
                        let gg = wzr * g;
                        gxp[base + aw.lo[c]] += gg * aw.w_lo[c];
                        gxp[base + aw.hi[c]] += gg * aw.w_hi[c];
                    }
                }
            }
        }
    }
}
