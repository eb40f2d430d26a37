//! Network layers built on the autodiff graph.
//!
//! Layers own [`ParamId`] handles into a [`ParamStore`] and are generic over
//! the scalar type at forward time, so the same model runs in 32-bit for
//! training and 64-bit for gradient checks.

pub mod attention;
pub mod block;
pub mod decoder;
pub mod ffn;
pub mod ghost;
mod param;
pub mod window;

use std::sync::Arc;

use rand::Rng;

pub use param::{Ctx, Init, ParamId, ParamStore, Parameter};

use crate::autograd::{Graph, Var};
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Gather index permuting `[B, C, S]` to `[B, S, C]`.
pub fn channels_last_index(b: usize, c: usize, s: usize) -> Arc<[usize]> {
    let mut idx = Vec::with_capacity(b * c * s);
    for n in 0..b {
        for p in 0..s {
            for ch in 0..c {
                idx.push((n * c + ch) * s + p);
            }
        }
    }
    idx.into()
}

/// Gather index permuting `[B, S, C]` to `[B, C, S]`.
pub fn channels_first_index(b: usize, c: usize, s: usize) -> Arc<[usize]> {
    let mut idx = Vec::with_capacity(b * c * s);
    for n in 0..b {
        for ch in 0..c {
            for p in 0..s {
                idx.push((n * s + p) * c + ch);
            }
        }
    }
    idx.into()
}

/// `[B, C, D, H, W]` volume to `[B, N, C]` tokens in row-major D-H-W order.
pub fn flatten_tokens<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<(Var, [usize; 3])> {
    let &[b, c, d, h, w] = g.shape(x) else {
        return Err(shape_err("flatten", format!("expected a volume, got {:?}", g.shape(x))));
    };
    let s = d * h * w;
    let y = g.gather(x, channels_last_index(b, c, s), &[b, s, c])?;
    Ok((y, [d, h, w]))
}

/// Inverse of [`flatten_tokens`].
pub fn unflatten_tokens<T: Scalar>(g: &mut Graph<T>, t: Var, grid: [usize; 3]) -> Result<Var> {
    let &[b, n, c] = g.shape(t) else {
        return Err(shape_err("unflatten", format!("expected tokens, got {:?}", g.shape(t))));
    };
    if n != grid.iter().product::<usize>() {
        return Err(shape_err("unflatten", format!("{} tokens for grid {:?}", n, grid)));
    }
    g.gather(t, channels_first_index(b, c, n), &[b, c, grid[0], grid[1], grid[2]])
}

/// Affine layer normalization over the trailing axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(vec![c]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![c]))?,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.p(self.gamma), ctx.p(self.beta));
        ctx.graph.layer_norm(x, g, b, Self::EPS)
    }
}

/// Group normalization with the default group count for `c` channels.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub groups: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
}

/// 8 groups, or one per channel below 8 channels.
pub fn default_groups(c: usize) -> usize {
    if c < 8 {
        c
    } else {
        8
    }
}

impl GroupNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        let groups = default_groups(c);
        if groups == 0 || c % groups != 0 {
            return Err(arg_err("group_norm", format!("{c} channels not divisible by {groups} groups")));
        }
        Ok(Self {
            groups,
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(vec![c]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![c]))?,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.p(self.gamma), ctx.p(self.beta));
        ctx.graph.group_norm(x, self.groups, g, b, Self::EPS)
    }
}

/// Per-sample stochastic-depth multipliers: `1 / (1 - p)` with probability
/// `1 - p`, else 0.
pub fn drop_path_factors<R: Rng + ?Sized>(batch: usize, p: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(arg_err("drop_path", format!("drop probability {p} outside [0, 1)")));
    }
    let keep = 1.0 - p;
    Ok((0..batch)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect())
}

/// Stochastic depth on a plain tensor whose leading axis is the batch.
pub fn drop_path<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    p: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(arg_err("drop_path", format!("drop probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 || x.numel() == 0 {
        return Ok(x.clone());
    }
    let b = x.shape()[0];
    let per = x.numel() / b;
    let f = drop_path_factors(b, p, rng)?;
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * T::lit(f[i / per]))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Graph version of [`drop_path`] drawing from the context RNG.
pub fn drop_path_var<T: Scalar>(ctx: &mut Ctx<T>, x: Var, p: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(arg_err("drop_path", format!("drop probability {p} outside [0, 1)")));
    }
    if !ctx.training || p == 0.0 {
        return Ok(x);
    }
    let b = ctx.graph.shape(x)[0];
    let rng = ctx
        .rng()
        .ok_or_else(|| arg_err("drop_path", "training forward without an RNG"))?;
    let f = drop_path_factors(b, p, rng)?;
    ctx.graph.scale_samples(x, f.into_iter().map(T::lit).collect())
}

/// Linear drop-path schedule: block `i` of `n` gets `p_max * i / (n - 1)`.
pub fn drop_path_schedule(p_max: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0; n];
    }
    (0..n).map(|i| p_max * i as f64 / (n - 1) as f64).collect()
}
