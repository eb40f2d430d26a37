//! Pre-norm transformer blocks and the encoder stage.

use super::attention::WindowAttention;
use super::ffn::{DenseMlp, Ffn, MixFfn};
use super::ghost::PatchEmbed;
use super::window::WindowSpec;
use super::{drop_path_var, Ctx, Init, LayerNorm, ParamStore};
use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::Scalar;

/// `x + DropPath(Attn(LN(x)))`, then `x + DropPath(FFN(LN(x)))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub ffn: Ffn,
    pub spec: WindowSpec,
    pub drop_path: f64,
}

impl TransformerBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        dim: usize,
        heads: usize,
        spec: WindowSpec,
        dense_mlp: bool,
        drop_path: f64,
    ) -> Result<Self> {
        let norm1 = LayerNorm::new(store, &format!("{name}.norm1"), dim)?;
        let attn = WindowAttention::new(store, init, &format!("{name}.attn"), dim, heads, spec.window)?;
        let norm2 = LayerNorm::new(store, &format!("{name}.norm2"), dim)?;
        let ffn_name = format!("{name}.ffn");
        let ffn = if dense_mlp {
            Ffn::Dense(DenseMlp::new(store, init, &ffn_name, dim)?)
        } else {
            Ffn::Mix(MixFfn::new(store, init, &ffn_name, dim)?)
        };
        Ok(Self {
            norm1,
            attn,
            norm2,
            ffn,
            spec,
            drop_path,
        })
    }

    pub fn param_count(&self) -> usize {
        4 * self.attn.channels + self.attn.param_count() + self.ffn.param_count()
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var, grid: [usize; 3]) -> Result<Var> {
        let h = self.norm1.forward(ctx, x)?;
        let h = self.attn.forward(ctx, h, grid, self.spec)?;
        let h = drop_path_var(ctx, h, self.drop_path)?;
        let x = ctx.graph.add(x, h)?;
        let h = self.norm2.forward(ctx, x)?;
        let h = self.ffn.forward(ctx, h, grid)?;
        let h = drop_path_var(ctx, h, self.drop_path)?;
        ctx.graph.add(x, h)
    }
}

/// Patch embedding followed by a regular and a shifted transformer block.
#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub embed: PatchEmbed,
    pub blocks: [TransformerBlock; 2],
}

impl EncoderStage {
    /// Runs both blocks over embedded tokens.
    pub fn blocks_forward<T: Scalar>(&self, ctx: &mut Ctx<T>, tokens: Var, grid: [usize; 3]) -> Result<Var> {
        let t = self.blocks[0].forward(ctx, tokens, grid)?;
        self.blocks[1].forward(ctx, t, grid)
    }

    /// Volume in, `(tokens, grid)` out.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<(Var, [usize; 3])> {
        let (t, grid) = self.embed.forward(ctx, x)?;
        Ok((self.blocks_forward(ctx, t, grid)?, grid))
    }

    pub fn param_count(&self) -> usize {
        self.embed.param_count() + self.blocks.iter().map(|b| b.param_count()).sum::<usize>()
    }
}
