//! Token-wise feed-forward layers: the low-rank MixFFN and a dense 4x MLP.

use super::{channels_first_index, channels_last_index, Ctx, Init, ParamId, ParamStore};
use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::tensor::Scalar;

/// Bottleneck rank `max(d / 2, 64)`.
pub fn mixffn_rank(d: usize) -> usize {
    (d / 2).max(64)
}

/// `2 d r + 27 r`.
pub fn mixffn_param_count(d: usize) -> usize {
    let r = mixffn_rank(d);
    2 * d * r + 27 * r
}

/// `8 d^2` (bias-free `d -> 4d -> d`).
pub fn dense_mlp_param_count(d: usize) -> usize {
    8 * d * d
}

/// `W_B (h + DWConv(h))` with `h = SiLU(W_A x)`, the depthwise conv running on
/// the token grid.
#[derive(Clone, Debug)]
pub struct MixFfn {
    pub dim: usize,
    pub rank: usize,
    pub wa: ParamId,
    pub dw: ParamId,
    pub wb: ParamId,
}

impl MixFfn {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, dim: usize) -> Result<Self> {
        let rank = mixffn_rank(dim);
        Ok(Self {
            dim,
            rank,
            wa: store.add(format!("{name}.wa"), init.fan_in(&[dim, rank], dim))?,
            dw: store.add(format!("{name}.dw"), init.fan_in(&[rank, 1, 3, 3, 3], 27))?,
            wb: store.add(format!("{name}.wb"), init.fan_in(&[rank, dim], rank))?,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var, grid: [usize; 3]) -> Result<Var> {
        let &[b, n, d] = ctx.graph.shape(x) else {
            return Err(shape_err("mixffn", format!("expected tokens, got {:?}", ctx.graph.shape(x))));
        };
        if n != grid.iter().product::<usize>() || d != self.dim {
            return Err(shape_err("mixffn", format!("{n}x{d} tokens on grid {:?}", grid)));
        }
        let r = self.rank;
        let (wa, dw, wb) = (ctx.p(self.wa), ctx.p(self.dw), ctx.p(self.wb));
        let h = ctx.graph.linear(x, wa, None)?;
        let h = ctx.graph.silu(h);
        let vol = ctx.graph.gather(h, channels_first_index(b, r, n), &[b, r, grid[0], grid[1], grid[2]])?;
        let sp = ctx.graph.depthwise_conv3d(vol, dw, 1, 1)?;
        let sp = ctx.graph.gather(sp, channels_last_index(b, r, n), &[b, n, r])?;
        let mixed = ctx.graph.add(h, sp)?;
        ctx.graph.linear(mixed, wb, None)
    }
}

/// Bias-free `d -> 4d -> d` MLP with SiLU.
#[derive(Clone, Debug)]
pub struct DenseMlp {
    pub dim: usize,
    pub w1: ParamId,
    pub w2: ParamId,
}

impl DenseMlp {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            dim,
            w1: store.add(format!("{name}.w1"), init.fan_in(&[dim, 4 * dim], dim))?,
            w2: store.add(format!("{name}.w2"), init.fan_in(&[4 * dim, dim], 4 * dim))?,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let (w1, w2) = (ctx.p(self.w1), ctx.p(self.w2));
        let h = ctx.graph.linear(x, w1, None)?;
        let h = ctx.graph.silu(h);
        ctx.graph.linear(h, w2, None)
    }
}

/// Feed-forward choice inside a transformer block.
#[derive(Clone, Debug)]
pub enum Ffn {
    Mix(MixFfn),
    Dense(DenseMlp),
}

impl Ffn {
    pub fn param_count(&self) -> usize {
        match self {
            Ffn::Mix(m) => mixffn_param_count(m.dim),
            Ffn::Dense(m) => dense_mlp_param_count(m.dim),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var, grid: [usize; 3]) -> Result<Var> {
        match self {
            Ffn::Mix(m) => m.forward(ctx, x, grid),
            Ffn::Dense(m) => m.forward(ctx, x),
        }
    }
}
