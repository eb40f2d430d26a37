//! Decoder: cross-attention skip fusion with squeeze-excitation, the
//! concat-and-conv fusion baseline, the final upsampling block and 1x1x1 heads.

use std::sync::Arc;

use super::ghost::GhostConv3d;
use super::window::{attention_flops, WindowPlan, WindowSpec};
use super::{flatten_tokens, unflatten_tokens, Ctx, GroupNorm, Init, ParamId, ParamStore};
use crate::autograd::Var;
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Bottleneck width of the excitation MLP: `C / 16`, at least 1.
pub fn se_hidden(c: usize) -> usize {
    (c / 16).max(1)
}

/// `s = sigmoid(W2 relu(W1 gap(y)))`, output `s * y` per channel.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub channels: usize,
    pub w1: ParamId,
    pub w2: ParamId,
}

impl SqueezeExcite {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize) -> Result<Self> {
        let h = se_hidden(c);
        Ok(Self {
            channels: c,
            w1: store.add(format!("{name}.w1"), init.fan_in(&[c, h], c))?,
            w2: store.add(format!("{name}.w2"), init.fan_in(&[h, c], h))?,
        })
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels * se_hidden(self.channels)
    }

    /// Channel gates `[B, C]`.
    pub fn gates<T: Scalar>(&self, ctx: &mut Ctx<T>, y: Var) -> Result<Var> {
        let (w1, w2) = (ctx.p(self.w1), ctx.p(self.w2));
        let z = ctx.graph.global_avg_pool3d(y)?;
        let h = ctx.graph.linear(z, w1, None)?;
        let h = ctx.graph.relu(h);
        let s = ctx.graph.linear(h, w2, None)?;
        Ok(ctx.graph.sigmoid(s))
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, y: Var) -> Result<Var> {
        let s = self.gates(ctx, y)?;
        ctx.graph.scale_channels(y, s)
    }
}

/// Cross-attention fusion parameters.
#[derive(Clone, Debug)]
pub struct CrossAttnFusion {
    pub heads: usize,
    pub window: usize,
    pub wq: ParamId,
    pub wkv: ParamId,
    pub wo: ParamId,
    pub se: SqueezeExcite,
    pub refine: GhostConv3d,
    pub norm: GroupNorm,
}

/// Concat-and-conv fusion parameters.
#[derive(Clone, Debug)]
pub struct ConcatFusion {
    pub conv: ParamId,
    pub norm: GroupNorm,
}

#[derive(Clone, Debug)]
pub enum FusionKind {
    CrossAttn(CrossAttnFusion),
    Concat(ConcatFusion),
}

/// One decoder stage: upsample decoder features 2x, project the encoder skip
/// to the decoder width, fuse, refine.
#[derive(Clone, Debug)]
pub struct FusionStage {
    pub c_dec: usize,
    pub c_skip: usize,
    pub c_out: usize,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub kind: FusionKind,
}

/// Shape settings of a fusion stage.
#[derive(Clone, Copy, Debug)]
pub struct FusionDims {
    pub c_dec: usize,
    pub c_skip: usize,
    pub c_out: usize,
    pub heads: usize,
    pub window: usize,
    pub ghost_ratio: usize,
}

impl FusionStage {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, dims: FusionDims, concat: bool) -> Result<Self> {
        let FusionDims {
            c_dec,
            c_skip,
            c_out,
            heads,
            window,
            ghost_ratio,
        } = dims;
        let proj_w = store.add(format!("{name}.skip_proj.w"), init.fan_in(&[c_skip, c_dec], c_skip))?;
        let proj_b = store.add(format!("{name}.skip_proj.b"), Tensor::zeros(vec![c_dec]))?;
        let kind = if concat {
            let conv = store.add(
                format!("{name}.conv"),
                init.fan_in(&[c_out, 2 * c_dec, 3, 3, 3], 2 * c_dec * 27),
            )?;
            let norm = GroupNorm::new(store, &format!("{name}.norm"), c_out)?;
            FusionKind::Concat(ConcatFusion { conv, norm })
        } else {
            if heads == 0 || c_dec % heads != 0 {
                return Err(arg_err("fusion", format!("{c_dec} channels not divisible by {heads} heads")));
            }
            if window == 0 {
                return Err(arg_err("fusion", "zero window"));
            }
            let wq = store.add(format!("{name}.wq"), init.fan_in(&[c_dec, c_dec], c_dec))?;
            let wkv = store.add(format!("{name}.wkv"), init.fan_in(&[c_dec, 2 * c_dec], c_dec))?;
            let wo = store.add(format!("{name}.wo"), init.fan_in(&[c_dec, c_out], c_dec))?;
            let se = SqueezeExcite::new(store, init, &format!("{name}.se"), c_out)?;
            let refine = GhostConv3d::new(store, init, &format!("{name}.refine"), c_out, c_out, 3, 1, 1, ghost_ratio)?;
            let norm = GroupNorm::new(store, &format!("{name}.norm"), c_out)?;
            FusionKind::CrossAttn(CrossAttnFusion {
                heads,
                window,
                wq,
                wkv,
                wo,
                se,
                refine,
                norm,
            })
        };
        Ok(Self {
            c_dec,
            c_skip,
            c_out,
            proj_w,
            proj_b,
            kind,
        })
    }

    pub fn param_count(&self) -> usize {
        let (cd, ce, co) = (self.c_dec, self.c_skip, self.c_out);
        let proj = ce * cd + cd;
        proj + match &self.kind {
            FusionKind::Concat(_) => co * 2 * cd * 27 + 2 * co,
            FusionKind::CrossAttn(f) => {
                3 * cd * cd + cd * co + f.se.param_count() + f.refine.param_count() + 2 * co
            }
        }
    }

    fn check<T: Scalar>(&self, ctx: &Ctx<T>, dec: Var, skip: Var) -> Result<(usize, [usize; 3])> {
        let (ds, ss) = (ctx.graph.shape(dec), ctx.graph.shape(skip));
        let ok = ds.len() == 5
            && ss.len() == 5
            && ds[0] == ss[0]
            && ds[1] == self.c_dec
            && ss[1] == self.c_skip
            && (2..5).all(|a| ss[a] == 2 * ds[a]);
        if !ok {
            return Err(shape_err(
                "fusion",
                format!(
                    "decoder {:?} and skip {:?}: expected [B, {}, d, h, w] and [B, {}, 2d, 2h, 2w]",
                    ds, ss, self.c_dec, self.c_skip
                ),
            ));
        }
        Ok((ds[0], [ss[2], ss[3], ss[4]]))
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, dec: Var, skip: Var) -> Result<Var> {
        let (b, grid) = self.check(ctx, dec, skip)?;
        let up = ctx.graph.upsample_trilinear(dec, 2)?;
        let (pw, pb) = (ctx.p(self.proj_w), ctx.p(self.proj_b));
        match &self.kind {
            FusionKind::Concat(f) => {
                let (t, _) = flatten_tokens(&mut ctx.graph, skip)?;
                let e = ctx.graph.linear(t, pw, Some(pb))?;
                let e = unflatten_tokens(&mut ctx.graph, e, grid)?;
                let cat = ctx.graph.concat_channels(up, e)?;
                let w = ctx.p(f.conv);
                let y = ctx.graph.conv3d(cat, w, 1, 1, 1)?;
                let y = f.norm.forward(ctx, y)?;
                Ok(ctx.graph.silu(y))
            }
            FusionKind::CrossAttn(f) => {
                let y = self.cross_attend(ctx, f, b, grid, up, skip, pw, pb)?;
                let y = f.se.forward(ctx, y)?;
                let y = f.refine.forward(ctx, y)?;
                let y = f.norm.forward(ctx, y)?;
                Ok(ctx.graph.silu(y))
            }
        }
    }

    /// Windowed cross-attention, queries from `up`, keys and values from the
    /// projected skip; returns `[B, C_out, D, H, W]`.
    #[allow(clippy::too_many_arguments)]
    fn cross_attend<T: Scalar>(
        &self,
        ctx: &mut Ctx<T>,
        f: &CrossAttnFusion,
        b: usize,
        grid: [usize; 3],
        up: Var,
        skip: Var,
        pw: Var,
        pb: Var,
    ) -> Result<Var> {
        let (cd, ce, co) = (self.c_dec, self.c_skip, self.c_out);
        let plan = WindowPlan::new(b, grid, WindowSpec::new([f.window; 3]))?;
        let mask = plan.mask::<T>();
        let (nw, t) = (b * plan.windows, plan.tokens());
        let (wq, wkv, wo) = (ctx.p(f.wq), ctx.p(f.wkv), ctx.p(f.wo));

        let qin = ctx.graph.gather(up, plan.partition_index_channels_first(cd, 0, cd), &[nw, t, cd])?;
        let q = ctx.graph.linear(qin, wq, None)?;
        let ein = ctx.graph.gather(skip, plan.partition_index_channels_first(ce, 0, ce), &[nw, t, ce])?;
        let e = ctx.graph.linear(ein, pw, Some(pb))?;
        let kv = ctx.graph.linear(e, wkv, None)?;
        let rows = nw * t;
        let k = ctx.graph.gather(kv, column_slice(rows, 2 * cd, 0, cd), &[nw, t, cd])?;
        let v = ctx.graph.gather(kv, column_slice(rows, 2 * cd, cd, cd), &[nw, t, cd])?;
        let a = ctx.graph.window_attention(q, k, v, f.heads, None, mask.as_ref())?;
        let o = ctx.graph.linear(a, wo, None)?;
        ctx.graph
            .gather(o, plan.reverse_index(co, true), &[b, co, grid[0], grid[1], grid[2]])
    }

    /// Attention FLOPs of this stage for one sample at the fused resolution.
    pub fn attention_flops(&self, grid: [usize; 3]) -> u64 {
        match &self.kind {
            FusionKind::CrossAttn(f) => attention_flops(grid, [f.window; 3], self.c_dec),
            FusionKind::Concat(_) => 0,
        }
    }
}

/// Gather index selecting columns `off .. off + n` of a `[rows, width]` matrix.
pub fn column_slice(rows: usize, width: usize, off: usize, n: usize) -> Arc<[usize]> {
    let mut idx = Vec::with_capacity(rows * n);
    for r in 0..rows {
        idx.extend(r * width + off..r * width + off + n);
    }
    idx.into()
}

/// Skip-free 2x upsampling, ghost convolution, GroupNorm and SiLU.
#[derive(Clone, Debug)]
pub struct FinalBlock {
    pub conv: GhostConv3d,
    pub norm: GroupNorm,
}

impl FinalBlock {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, cin: usize, cout: usize, ratio: usize) -> Result<Self> {
        Ok(Self {
            conv: GhostConv3d::new(store, init, &format!("{name}.conv"), cin, cout, 3, 1, 1, ratio)?,
            norm: GroupNorm::new(store, &format!("{name}.norm"), cout)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count()
            + 2 * self.conv.cout
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let up = ctx.graph.upsample_trilinear(x, 2)?;
        let y = self.conv.forward(ctx, up)?;
        let y = self.norm.forward(ctx, y)?;
        Ok(ctx.graph.silu(y))
    }
}

/// 1x1x1 convolution to class logits.
#[derive(Clone, Debug)]
pub struct Head {
    pub cin: usize,
    pub classes: usize,
    pub w: ParamId,
}

impl Head {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, cin: usize, classes: usize) -> Result<Self> {
        Ok(Self {
            cin,
            classes,
            w: store.add(format!("{name}.w"), init.fan_in(&[classes, cin, 1, 1, 1], cin))?,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let w = ctx.p(self.w);
        ctx.graph.conv3d(x, w, 1, 0, 1)
    }
}
