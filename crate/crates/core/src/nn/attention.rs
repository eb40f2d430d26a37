//! Windowed multi-head self-attention with a relative position bias.

use std::sync::Arc;

use super::window::{relative_position_index, relative_table_rows, WindowPlan, WindowSpec};
use super::{Ctx, Init, ParamId, ParamStore};
use crate::autograd::Var;
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Bias-free Q, K, V and output projections plus a per-head relative bias
/// table (zero-initialized).
#[derive(Clone, Debug)]
pub struct WindowAttention {
    pub channels: usize,
    pub heads: usize,
    pub window: [usize; 3],
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bias_table: ParamId,
    bias_index: Arc<[usize]>,
}

impl WindowAttention {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        channels: usize,
        heads: usize,
        window: [usize; 3],
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(arg_err(
                "window_attention",
                format!("{channels} channels not divisible by {heads} heads"),
            ));
        }
        if window.contains(&0) {
            return Err(arg_err("window_attention", "zero window extent"));
        }
        let c = channels;
        let mut proj = |n: &str| store.add(format!("{name}.{n}"), init.fan_in(&[c, c], c));
        let (wq, wk, wv, wo) = (proj("wq")?, proj("wk")?, proj("wv")?, proj("wo")?);
        let rows = relative_table_rows(window);
        let bias_table = store.add(format!("{name}.rel_bias"), Tensor::zeros(vec![rows, heads]))?;
        Ok(Self {
            channels,
            heads,
            window,
            wq,
            wk,
            wv,
            wo,
            bias_table,
            bias_index: relative_position_index(window).into(),
        })
    }

    pub fn param_count(&self) -> usize {
        4 * self.channels * self.channels + relative_table_rows(self.window) * self.heads
    }

    /// Attention over already partitioned windows `[B * M, T, C]`.
    pub fn attend_windows<T: Scalar>(
        &self,
        ctx: &mut Ctx<T>,
        windows: Var,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let t: usize = self.window.iter().product();
        let s = ctx.graph.shape(windows);
        if s.len() != 3 || s[1] != t || s[2] != self.channels {
            return Err(shape_err(
                "window_msa",
                format!("windows {:?} for window {:?} and {} channels", s, self.window, self.channels),
            ));
        }
        let (wq, wk, wv, wo) = (ctx.p(self.wq), ctx.p(self.wk), ctx.p(self.wv), ctx.p(self.wo));
        let table = ctx.p(self.bias_table);
        let q = ctx.graph.linear(windows, wq, None)?;
        let k = ctx.graph.linear(windows, wk, None)?;
        let v = ctx.graph.linear(windows, wv, None)?;
        let a = ctx.graph.window_attention(
            q,
            k,
            v,
            self.heads,
            Some((table, self.bias_index.clone())),
            mask,
        )?;
        ctx.graph.linear(a, wo, None)
    }

    /// `[B, N, C]` tokens on `grid`: pad, roll by `-shift`, partition, attend,
    /// then undo all three.
    pub fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<T>,
        tokens: Var,
        grid: [usize; 3],
        spec: WindowSpec,
    ) -> Result<Var> {
        let &[b, n, c] = ctx.graph.shape(tokens) else {
            return Err(shape_err("window_msa", format!("expected tokens, got {:?}", ctx.graph.shape(tokens))));
        };
        if n != grid.iter().product::<usize>() || c != self.channels || spec.window != self.window {
            return Err(shape_err(
                "window_msa",
                format!("{n}x{c} tokens on grid {:?} with window {:?}", grid, spec.window),
            ));
        }
        let plan = WindowPlan::new(b, grid, spec)?;
        let mask = plan.mask::<T>();
        let shape = [b * plan.windows, plan.tokens(), c];
        let w = ctx.graph.gather(tokens, plan.partition_index(c, 0, c), &shape)?;
        let y = self.attend_windows(ctx, w, mask.as_ref())?;
        ctx.graph.gather(y, plan.reverse_index(c, false), &[b, n, c])
    }
}
