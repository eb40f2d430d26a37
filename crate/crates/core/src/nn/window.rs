//! 3-D window machinery: cyclic shifts, window partition/reverse, relative
//! position indices, shift masks and the attention cost model.
//!
//! Channels-last volumes `[B, D, H, W, C]` share their memory layout with token
//! sequences `[B, N, C]`, so everything here works on either view.

use std::sync::Arc;

use crate::autograd::GATHER_ZERO;
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Window extents and cyclic shift per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub window: [usize; 3],
    pub shift: [usize; 3],
}

impl WindowSpec {
    pub fn new(window: [usize; 3]) -> Self {
        Self {
            window,
            shift: [0; 3],
        }
    }

    /// Half-window shift on every axis.
    pub fn shifted(window: [usize; 3]) -> Self {
        Self {
            window,
            shift: window.map(|w| w / 2),
        }
    }

    pub fn tokens(&self) -> usize {
        self.window.iter().product()
    }

    pub fn is_shifted(&self) -> bool {
        self.shift.iter().any(|&s| s > 0)
    }

    /// Grid rounded up to window multiples.
    pub fn padded(&self, grid: [usize; 3]) -> [usize; 3] {
        [0, 1, 2].map(|a| grid[a].div_ceil(self.window[a]) * self.window[a])
    }

    /// Windows per sample on the padded grid.
    pub fn windows(&self, grid: [usize; 3]) -> usize {
        (0..3).map(|a| grid[a].div_ceil(self.window[a])).product()
    }
}

fn check_channels_last<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<[usize; 5]> {
    match *x.shape() {
        [b, d, h, w, c] => Ok([b, d, h, w, c]),
        _ => Err(shape_err(op, format!("expected [B, D, H, W, C], got {:?}", x.shape()))),
    }
}

/// Torus roll of a `[B, D, H, W, C]` volume: `out[i] = x[(i - s) mod n]` per
/// axis, so `[a, b, c, d]` shifted by 1 is `[d, a, b, c]`. Negative shifts roll
/// the other way; `cyclic_shift(cyclic_shift(x, s), -s) == x`.
pub fn cyclic_shift<T: Scalar>(x: &Tensor<T>, shift: [isize; 3]) -> Result<Tensor<T>> {
    let [b, d, h, w, c] = check_channels_last("cyclic_shift", x)?;
    let dims = [d, h, w];
    let src = |a: usize, i: usize| -> usize {
        let n = dims[a] as isize;
        (i as isize - shift[a]).rem_euclid(n) as usize
    };
    let xd = x.data();
    let mut out = Vec::with_capacity(xd.len());
    for n in 0..b {
        for i in 0..d {
            for j in 0..h {
                for k in 0..w {
                    let s = (((n * d + src(0, i)) * h + src(1, j)) * w + src(2, k)) * c;
                    out.extend_from_slice(&xd[s..s + c]);
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// `[B, D, H, W, C]` to `[B * M, wd * wh * ww, C]`; windows are ordered
/// row-major over the window grid, tokens row-major inside each window.
pub fn window_partition<T: Scalar>(x: &Tensor<T>, window: [usize; 3]) -> Result<Tensor<T>> {
    let [b, d, h, w, c] = check_channels_last("window_partition", x)?;
    let grid = [d, h, w];
    check_divisible("window_partition", grid, window)?;
    let map = slot_sources(b, grid, window);
    let xd = x.data();
    let mut out = Vec::with_capacity(xd.len());
    for &s in &map {
        out.extend_from_slice(&xd[s * c..(s + 1) * c]);
    }
    let spec = WindowSpec::new(window);
    Tensor::new(vec![b * spec.windows(grid), spec.tokens(), c], out)
}

/// Inverse of [`window_partition`].
pub fn window_reverse<T: Scalar>(
    windows: &Tensor<T>,
    window: [usize; 3],
    batch: usize,
    grid: [usize; 3],
) -> Result<Tensor<T>> {
    check_divisible("window_reverse", grid, window)?;
    let spec = WindowSpec::new(window);
    let &[nw, t, c] = windows.shape() else {
        return Err(shape_err("window_reverse", format!("expected 3-D windows, got {:?}", windows.shape())));
    };
    if nw != batch * spec.windows(grid) || t != spec.tokens() {
        return Err(shape_err(
            "window_reverse",
            format!("{:?} does not tile batch {} of grid {:?}", windows.shape(), batch, grid),
        ));
    }
    let map = slot_sources(batch, grid, window);
    let wd = windows.data();
    let mut out = vec![T::zero(); wd.len()];
    for (slot, &s) in map.iter().enumerate() {
        out[s * c..(s + 1) * c].copy_from_slice(&wd[slot * c..(slot + 1) * c]);
    }
    Tensor::new(vec![batch, grid[0], grid[1], grid[2], c], out)
}

fn check_divisible(op: &'static str, grid: [usize; 3], window: [usize; 3]) -> Result<()> {
    if (0..3).any(|a| window[a] == 0 || grid[a] % window[a] != 0) {
        return Err(shape_err(
            op,
            format!("grid {:?} is not a multiple of window {:?}", grid, window),
        ));
    }
    Ok(())
}

/// For each window slot `(b, m, t)`, the flat token index `b * N + n` on `grid`.
fn slot_sources(batch: usize, grid: [usize; 3], window: [usize; 3]) -> Vec<usize> {
    let [d, h, w] = grid;
    let [wd, wh, ww] = window;
    let mut out = Vec::with_capacity(batch * d * h * w);
    for n in 0..batch {
        for bd in 0..d / wd {
            for bh in 0..h / wh {
                for bw in 0..w / ww {
                    for i in 0..wd {
                        for j in 0..wh {
                            for k in 0..ww {
                                let (z, y, x) = (bd * wd + i, bh * wh + j, bw * ww + k);
                                out.push(((n * d + z) * h + y) * w + x);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Row of the relative bias table for every `(i, j)` token pair of a window.
pub fn relative_position_index(window: [usize; 3]) -> Vec<usize> {
    let [wd, wh, ww] = window;
    let coords: Vec<[usize; 3]> = (0..wd)
        .flat_map(|i| (0..wh).flat_map(move |j| (0..ww).map(move |k| [i, j, k])))
        .collect();
    let (sh, sw) = (2 * wh - 1, 2 * ww - 1);
    let mut out = Vec::with_capacity(coords.len() * coords.len());
    for a in &coords {
        for b in &coords {
            let rd = a[0] + wd - 1 - b[0];
            let rh = a[1] + wh - 1 - b[1];
            let rw = a[2] + ww - 1 - b[2];
            out.push((rd * sh + rh) * sw + rw);
        }
    }
    out
}

/// Rows in the relative bias table of a window.
pub fn relative_table_rows(window: [usize; 3]) -> usize {
    window.iter().map(|&w| 2 * w - 1).product()
}

/// How tokens of a `[B, N, C]` sequence on `grid` map into attention windows:
/// right zero-padding to window multiples, a cyclic roll by `-shift`, then
/// partition. Padded slots read as zero.
#[derive(Clone, Debug)]
pub struct WindowPlan {
    pub batch: usize,
    pub grid: [usize; 3],
    pub spec: WindowSpec,
    pub padded: [usize; 3],
    /// Windows per sample.
    pub windows: usize,
    /// Source token `b * N + n` of each slot, or `GATHER_ZERO` for padding.
    src: Vec<usize>,
    /// Slot of each real token.
    slot_of: Vec<usize>,
}

impl WindowPlan {
    pub fn new(batch: usize, grid: [usize; 3], spec: WindowSpec) -> Result<Self> {
        if (0..3).any(|a| spec.window[a] == 0 || spec.shift[a] >= spec.window[a] || grid[a] == 0) {
            return Err(shape_err(
                "window_plan",
                format!("window {:?} / shift {:?} on grid {:?}", spec.window, spec.shift, grid),
            ));
        }
        let padded = spec.padded(grid);
        let n_real = grid.iter().product::<usize>();
        let n_pad = padded.iter().product::<usize>();
        let rolled = slot_sources(batch, padded, spec.window);
        let mut src = Vec::with_capacity(rolled.len());
        let mut slot_of = vec![usize::MAX; batch * n_real];
        for (slot, &p) in rolled.iter().enumerate() {
            // p indexes the rolled padded grid; undo the roll, then drop padding.
            let (b, mut r) = (p / n_pad, p % n_pad);
            let mut pos = [0; 3];
            for a in (0..3).rev() {
                pos[a] = r % padded[a];
                r /= padded[a];
            }
            let orig = [0, 1, 2].map(|a| (pos[a] + spec.shift[a]) % padded[a]);
            if (0..3).all(|a| orig[a] < grid[a]) {
                let n = (orig[0] * grid[1] + orig[1]) * grid[2] + orig[2];
                let t = b * n_real + n;
                src.push(t);
                slot_of[t] = slot;
            } else {
                src.push(GATHER_ZERO);
            }
        }
        Ok(Self {
            batch,
            grid,
            spec,
            padded,
            windows: spec.windows(grid),
            src,
            slot_of,
        })
    }

    pub fn tokens(&self) -> usize {
        self.spec.tokens()
    }

    pub fn needs_padding(&self) -> bool {
        self.padded != self.grid
    }

    /// Gather index taking `[B, N, c_src]` tokens to `[B * M, T, c]` windows,
    /// reading channels `c_off .. c_off + c`.
    pub fn partition_index(&self, c_src: usize, c_off: usize, c: usize) -> Arc<[usize]> {
        let mut idx = Vec::with_capacity(self.src.len() * c);
        for &s in &self.src {
            if s == GATHER_ZERO {
                idx.extend(std::iter::repeat_n(GATHER_ZERO, c));
            } else {
                idx.extend((0..c).map(|ch| s * c_src + c_off + ch));
            }
        }
        idx.into()
    }

    /// Like [`Self::partition_index`] but reading a channels-first
    /// `[B, c_src, N]` volume.
    pub fn partition_index_channels_first(&self, c_src: usize, c_off: usize, c: usize) -> Arc<[usize]> {
        let n_real = self.grid.iter().product::<usize>();
        let mut idx = Vec::with_capacity(self.src.len() * c);
        for &s in &self.src {
            if s == GATHER_ZERO {
                idx.extend(std::iter::repeat_n(GATHER_ZERO, c));
            } else {
                let (b, n) = (s / n_real, s % n_real);
                idx.extend((0..c).map(|ch| (b * c_src + c_off + ch) * n_real + n));
            }
        }
        idx.into()
    }

    /// Gather index taking `[B * M, T, c]` windows back to real tokens, either
    /// as `[B, N, c]` or channels-first `[B, c, N]`.
    pub fn reverse_index(&self, c: usize, channels_first: bool) -> Arc<[usize]> {
        let n_real = self.grid.iter().product::<usize>();
        let mut idx = vec![0; self.batch * n_real * c];
        for (t, &slot) in self.slot_of.iter().enumerate() {
            let (b, n) = (t / n_real, t % n_real);
            for ch in 0..c {
                let dst = if channels_first {
                    (b * c + ch) * n_real + n
                } else {
                    t * c + ch
                };
                idx[dst] = slot * c + ch;
            }
        }
        idx.into()
    }

    /// Region label of every slot of one sample: real tokens are labelled by
    /// which axes wrapped around during the roll, padding gets its own label.
    pub fn labels(&self) -> Vec<u8> {
        let per = self.windows * self.tokens();
        let n_pad = self.padded.iter().product::<usize>();
        let rolled = slot_sources(1, self.padded, self.spec.window);
        rolled[..per]
            .iter()
            .map(|&p| {
                let mut r = p % n_pad;
                let mut label = 0u8;
                for a in (0..3).rev() {
                    let pos = r % self.padded[a];
                    r /= self.padded[a];
                    let orig = (pos + self.spec.shift[a]) % self.padded[a];
                    if orig >= self.grid[a] {
                        return 8;
                    }
                    if pos + self.spec.shift[a] >= self.padded[a] {
                        label |= 1 << a;
                    }
                }
                label
            })
            .collect()
    }

    /// Additive `[M, T, T]` mask with `-inf` between tokens of different
    /// regions, or `None` when every window is a single region.
    pub fn mask<T: Scalar>(&self) -> Option<Tensor<T>> {
        if !self.spec.is_shifted() && !self.needs_padding() {
            return None;
        }
        Some(build_mask(&self.labels(), self.windows, self.tokens()))
    }
}

fn build_mask<T: Scalar>(labels: &[u8], windows: usize, t: usize) -> Tensor<T> {
    Tensor::from_fn(vec![windows, t, t], |idx| {
        let (m, i, j) = (idx / (t * t), (idx / t) % t, idx % t);
        if labels[m * t + i] == labels[m * t + j] {
            T::zero()
        } else {
            T::neg_infinity()
        }
    })
}

/// Shift mask for a `grid` under `spec`, `[M, T, T]`; all zeros when the
/// spec has no shift and the grid tiles exactly.
pub fn build_shift_mask<T: Scalar>(grid: [usize; 3], spec: WindowSpec) -> Result<Tensor<T>> {
    let plan = WindowPlan::new(1, grid, spec)?;
    Ok(plan
        .mask()
        .unwrap_or_else(|| Tensor::zeros(vec![plan.windows, plan.tokens(), plan.tokens()])))
}

/// Floating-point operations (2 per multiply-accumulate) of windowed attention
/// over one sample: Q, K, V and output projections plus `Q K^T` and `A V`,
/// counted on the padded grid.
pub fn attention_flops(grid: [usize; 3], window: [usize; 3], channels: usize) -> u64 {
    let spec = WindowSpec::new(window);
    let m = spec.windows(grid) as u64;
    let t = spec.tokens() as u64;
    let c = channels as u64;
    2 * m * (4 * t * c * c + 2 * t * t * c)
}
