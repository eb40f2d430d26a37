//! Ghost convolution and the convolutional patch embedding.

use std::sync::Arc;

use super::{flatten_tokens, Ctx, Init, LayerNorm, ParamId, ParamStore};
use crate::autograd::Var;
use crate::error::{arg_err, Result};
use crate::tensor::{conv_out_extent, Scalar};

/// Kernel of the cheap depthwise branch, independent of the primary kernel.
pub const GHOST_KERNEL: usize = 3;

/// Exact parameter count of a ghost convolution.
pub fn ghost_param_count(cin: usize, cout: usize, k: usize, ratio: usize) -> usize {
    let c1 = cout / ratio.max(1);
    cin * c1 * k.pow(3) + (cout - c1) * GHOST_KERNEL.pow(3)
}

/// Parameter count of a plain bias-free convolution.
pub fn standard_param_count(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k.pow(3)
}

/// A convolution producing `floor(cout / ratio)` primary channels; the rest are
/// depthwise 3x3x3 filters of primary channel `j mod C1`. `ratio == 1` is a
/// plain convolution.
#[derive(Clone, Debug)]
pub struct GhostConv3d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub primary_channels: usize,
    pub primary: ParamId,
    pub ghost: Option<ParamId>,
}

impl GhostConv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        ratio: usize,
    ) -> Result<Self> {
        if ratio == 0 || cin == 0 || kernel == 0 || stride == 0 {
            return Err(arg_err(
                "ghost_conv",
                format!("cin {cin}, kernel {kernel}, stride {stride}, ratio {ratio} must be positive"),
            ));
        }
        let c1 = cout / ratio;
        if c1 == 0 {
            return Err(arg_err(
                "ghost_conv",
                format!("{cout} output channels leave no primary channel at ratio {ratio}"),
            ));
        }
        let k3 = kernel.pow(3);
        let w = init.fan_in(&[c1, cin, kernel, kernel, kernel], cin * k3);
        let primary = store.add(format!("{name}.primary"), w)?;
        let ghost = if cout > c1 {
            let g = GHOST_KERNEL;
            let w = init.fan_in(&[cout - c1, 1, g, g, g], g.pow(3));
            Some(store.add(format!("{name}.ghost"), w)?)
        } else {
            None
        };
        Ok(Self {
            cin,
            cout,
            kernel,
            stride,
            padding,
            primary_channels: c1,
            primary,
            ghost,
        })
    }

    pub fn ghost_channels(&self) -> usize {
        self.cout - self.primary_channels
    }

    pub fn param_count(&self) -> usize {
        self.cin * self.primary_channels * self.kernel.pow(3)
            + self.ghost_channels() * GHOST_KERNEL.pow(3)
    }

    /// Spatial output extents for a given input, if the kernel fits.
    pub fn out_extent(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let e = |s| conv_out_extent(s, self.kernel, self.stride, self.padding);
        Some([e(input[0])?, e(input[1])?, e(input[2])?])
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let w = ctx.p(self.primary);
        let prim = ctx.graph.conv3d(x, w, self.stride, self.padding, 1)?;
        let Some(gw) = self.ghost else {
            return Ok(prim);
        };
        let (c1, cg) = (self.primary_channels, self.ghost_channels());
        let src = if cg == c1 {
            prim
        } else {
            let shape = ctx.graph.shape(prim).to_vec();
            let (b, s) = (shape[0], shape[2..].iter().product::<usize>());
            let mut idx = Vec::with_capacity(b * cg * s);
            for n in 0..b {
                for j in 0..cg {
                    let base = (n * c1 + j % c1) * s;
                    idx.extend(base..base + s);
                }
            }
            let mut out_shape = shape;
            out_shape[1] = cg;
            ctx.graph.gather(prim, Arc::from(idx), &out_shape)?
        };
        let gwv = ctx.p(gw);
        let ghost = ctx.graph.depthwise_conv3d(src, gwv, 1, GHOST_KERNEL / 2)?;
        ctx.graph.concat_channels(prim, ghost)
    }
}

/// Ghost convolution, depthwise positional convolution and LayerNorm,
/// emitting `[B, N, C]` tokens.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub conv: GhostConv3d,
    pub pos: ParamId,
    pub norm: LayerNorm,
}

impl PatchEmbed {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        ratio: usize,
    ) -> Result<Self> {
        let conv = GhostConv3d::new(store, init, &format!("{name}.conv"), cin, cout, kernel, stride, padding, ratio)?;
        let pos = store.add(format!("{name}.pos"), init.fan_in(&[cout, 1, 3, 3, 3], 27))?;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), cout)?;
        Ok(Self { conv, pos, norm })
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.conv.cout * 27 + 2 * self.conv.cout
    }

    /// Returns tokens and their grid.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<(Var, [usize; 3])> {
        let f = self.conv.forward(ctx, x)?;
        let pw = ctx.p(self.pos);
        let f = ctx.graph.depthwise_conv3d(f, pw, 1, 1)?;
        let (t, grid) = flatten_tokens(&mut ctx.graph, f)?;
        Ok((self.norm.forward(ctx, t)?, grid))
    }
}
