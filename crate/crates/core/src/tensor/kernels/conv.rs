use crate::error::{shape_err, Result};
use crate::tensor::{conv_out_extent, Scalar};

/// Geometry of a grouped, bias-free, zero-padded 3-D convolution with a cubic kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub groups: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(
        x_shape: &[usize],
        w_shape: &[usize],
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Self> {
        if x_shape.len() != 5 {
            return Err(shape_err("conv3d", format!("input must be 5-D, got {:?}", x_shape)));
        }
        if w_shape.len() != 5 || w_shape[2] != w_shape[3] || w_shape[3] != w_shape[4] {
            return Err(shape_err(
                "conv3d",
                format!("weight must be [Cout, Cin/g, k, k, k], got {:?}", w_shape),
            ));
        }
        if stride == 0 {
            return Err(shape_err("conv3d", "stride must be >= 1"));
        }
        let (cin, cout) = (x_shape[1], w_shape[0]);
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(shape_err(
                "conv3d",
                format!("groups {} must divide Cin {} and Cout {}", groups, cin, cout),
            ));
        }
        if w_shape[1] != cin / groups {
            return Err(shape_err(
                "conv3d",
                format!(
                    "channel mismatch: input has {} channels ({} per group), weight expects {}",
                    cin,
                    cin / groups,
                    w_shape[1]
                ),
            ));
        }
        let k = w_shape[2];
        let input = [x_shape[2], x_shape[3], x_shape[4]];
        let mut output = [0; 3];
        for a in 0..3 {
            output[a] = match conv_out_extent(input[a], k, stride, pad) {
                Some(s) if s >= 1 => s,
                _ => {
                    return Err(shape_err(
                        "conv3d",
                        format!(
                            "degenerate output extent on axis {} (S={}, k={}, s={}, p={})",
                            a, input[a], k, stride, pad
                        ),
                    ))
                }
            };
        }
        Ok(Self {
            batch: x_shape[0],
            cin,
            cout,
            groups,
            kernel: k,
            stride,
            pad,
            input,
            output,
        })
    }

    pub fn output_shape(&self) -> [usize; 5] {
        [self.batch, self.cout, self.output[0], self.output[1], self.output[2]]
    }

    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.output.iter().product()
    }

    /// Range of output positions along an axis whose tap `k` lands inside the input.
    #[inline]
    fn valid_range(&self, axis: usize, k: usize) -> (usize, usize) {
        let (s, p, n_in, n_out) = (self.stride, self.pad, self.input[axis], self.output[axis]);
        // need 0 <= o*s + k - p < n_in
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if n_in + p <= k {
            0
        } else {
            ((n_in + p - k - 1) / s + 1).min(n_out)
        };
        (lo, hi.max(lo))
    }
}

/// `y[b, co] = sum_{ci in group, kd, kh, kw} w[co, ci, kd, kh, kw] * x[b, ci, ...]`.
pub fn conv3d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], y: &mut [T]) {
    let (isp, osp) = (g.in_vol(), g.out_vol());
    let [_, ih, iw] = g.input;
    let [od, oh, ow] = g.output;
    let k = g.kernel;
    let k3 = k * k * k;
    let cin_g = g.cin / g.groups;
    let cout_g = g.cout / g.groups;
    let s = g.stride;
    y.fill(T::zero());
    for b in 0..g.batch {
        for co in 0..g.cout {
            let grp = co / cout_g;
            let yp = &mut y[(b * g.cout + co) * osp..][..osp];
            for cig in 0..cin_g {
                let ci = grp * cin_g + cig;
                let xp = &x[(b * g.cin + ci) * isp..][..isp];
                let wk = &w[(co * cin_g + cig) * k3..][..k3];
                for kd in 0..k {
                    let (d_lo, d_hi) = g.valid_range(0, kd);
                    for kh in 0..k {
                        let (h_lo, h_hi) = g.valid_range(1, kh);
                        for kw in 0..k {
                            let (w_lo, w_hi) = g.valid_range(2, kw);
                            if w_lo >= w_hi {
                                continue;
                            }
                            let wv = wk[(kd * k + kh) * k + kw];
                            let off = kw as isize - g.pad as isize;
                            for o_d in d_lo..d_hi {
                                let i_d = o_d * s + kd - g.pad;
                                for o_h in h_lo..h_hi {
                                    let i_h = o_h * s + kh - g.pad;
                                    let yr = &mut yp[(o_d * oh + o_h) * ow..][..ow];
                                    let xr = &xp[(i_d * ih + i_h) * iw..][..iw];
                                    if s == 1 {
                                        let start = (w_lo as isize + off) as usize;
                                        let n = w_hi - w_lo;
                                        for (yv, &xv) in
                                            yr[w_lo..w_hi].iter_mut().zip(&xr[start..start + n])
                                        {
                                            *yv += wv * xv;
                                        }
                                    } else {
                                        for o_w in w_lo..w_hi {
                                            let i_w = (o_w * s) as isize + off;
                                            yr[o_w] += wv * xr[i_w as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let _ = od;
}

/// Accumulates the input gradient into `gx`.
pub fn conv3d_backward_input<T: Scalar>(g: &ConvGeom, gy: &[T], w: &[T], gx: &mut [T]) {
    let (isp, osp) = (g.in_vol(), g.out_vol());
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let k = g.kernel;
    let k3 = k * k * k;
    let cin_g = g.cin / g.groups;
    let cout_g = g.cout / g.groups;
    let s = g.stride;
    for b in 0..g.batch {
        for ci in 0..g.cin {
            let grp = ci / cin_g;
            let cig = ci % cin_g;
            let gxp = &mut gx[(b * g.cin + ci) * isp..][..isp];
            for cog in 0..cout_g {
                let co = grp * cout_g + cog;
                let gyp = &gy[(b * g.cout + co) * osp..][..osp];
                let wk = &w[(co * cin_g + cig) * k3..][..k3];
                for kd in 0..k {
                    let (d_lo, d_hi) = g.valid_range(0, kd);
                    for kh in 0..k {
                        let (h_lo, h_hi) = g.valid_range(1, kh);
                        for kw in 0..k {
                            let (w_lo, w_hi) = g.valid_range(2, kw);
                            if w_lo >= w_hi {
                                continue;
                            }
                            let wv = wk[(kd * k + kh) * k + kw];
                            let off = kw as isize - g.pad as isize;
                            for o_d in d_lo..d_hi {
                                let i_d = o_d * s + kd - g.pad;
                                for o_h in h_lo..h_hi {
                                    let i_h = o_h * s + kh - g.pad;
                                    let gyr = &gyp[(o_d * oh + o_h) * ow..][..ow];
                                    let gxr = &mut gxp[(i_d * ih + i_h) * iw..][..iw];
                                    if s == 1 {
                                        let start = (w_lo as isize + off) as usize;
                                        let n = w_hi - w_lo;
                                        for (xv, &yv) in
                                            gxr[start..start + n].iter_mut().zip(&gyr[w_lo..w_hi])
                                        {
                                            *xv += wv * yv;
                                        }
                                    } else {
                                        for o_w in w_lo..w_hi {
                                            let i_w = (o_w * s) as isize + off;
                                            gxr[i_w as usize] += wv * gyr[o_w];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates the weight gradient into `gw`.
pub fn conv3d_backward_weight<T: Scalar>(g: &ConvGeom, gy: &[T], x: &[T], gw: &mut [T]) {
    let (isp, osp) = (g.in_vol(), g.out_vol());
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let k = g.kernel;
    let k3 = k * k * k;
    let cin_g = g.cin / g.groups;
    let cout_g = g.cout / g.groups;
    let s = g.stride;
    for b in 0..g.batch {
        for co in 0..g.cout {
            let grp = co / cout_g;
            let gyp = &gy[(b * g.cout + co) * osp..][..osp];
            for cig in 0..cin_g {
                let ci = grp * cin_g + cig;
                let xp = &x[(b * g.cin + ci) * isp..][..isp];
                let gwk = &mut gw[(co * cin_g + cig) * k3..][..k3];
                for kd in 0..k {
                    let (d_lo, d_hi) = g.valid_range(0, kd);
                    for kh in 0..k {
                        let (h_lo, h_hi) = g.valid_range(1, kh);
                        for kw in 0..k {
                            let (w_lo, w_hi) = g.valid_range(2, kw);
                            if w_lo >= w_hi {
                                continue;
                            }
                            let off = kw as isize - g.pad as isize;
                            let mut acc = T::zero();
                            for o_d in d_lo..d_hi {
                                let i_d = o_d * s + kd - g.pad;
                                for o_h in h_lo..h_hi {
                                    let i_h = o_h * s + kh - g.pad;
                                    let gyr = &gyp[(o_d * oh + o_h) * ow..][..ow];
                                    let xr = &xp[(i_d * ih + i_h) * iw..][..iw];
                                    if s == 1 {
                                        let start = (w_lo as isize + off) as usize;
                                        let n = w_hi - w_lo;
                                        acc += super::dot(&gyr[w_lo..w_hi], &xr[start..start + n]);
                                    } else {
                                        for o_w in w_lo..w_hi {
                                            let i_w = (o_w * s) as isize + off;
                                            acc += gyr[o_w] * xr[i_w as usize];
                                        }
                                    }
                                }
                            }
                            gwk[(kd * k + kh) * k + kw] += acc;
                        }
                    }
                }
            }
        }
    }
}
