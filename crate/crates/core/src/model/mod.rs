//! Full network assembly, parameter and FLOP accounting, checkpoints.

pub mod checkpoint;
mod config;
mod flops;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ConvKind, FfnKind, FusionKind, ModelConfig, ENCODER_BLOCKS, INPUT_MULTIPLE};
pub use flops::{estimate_flops, FlopReport};

use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::nn::block::{EncoderStage, TransformerBlock};
use crate::nn::decoder::{FinalBlock, FusionDims, FusionStage, Head};
use crate::nn::ghost::PatchEmbed;
use crate::nn::window::WindowSpec;
use crate::nn::{drop_path_schedule, unflatten_tokens, Ctx, Init, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Final logits at input resolution plus the two auxiliary logits at their
/// native decoder resolutions (`/4`, then `/2`).
#[derive(Clone, Debug)]
pub struct SegOutput<T: Scalar = f32> {
    pub logits: Tensor<T>,
    pub aux: Vec<Tensor<T>>,
}

/// Graph handles of a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SegVars {
    pub logits: Var,
    pub aux: [Var; 2],
}

/// The assembled network and its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: [EncoderStage; 4],
    pub decoder: [FusionStage; 3],
    pub final_block: FinalBlock,
    pub head: Head,
    pub aux_heads: [Head; 2],
}

impl Model {
    /// Deterministic construction from `config.seed`.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let cfg = config;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut init = Init { rng: &mut rng };
        let ratio = cfg.effective_ratio();
        let drops = drop_path_schedule(cfg.drop_path_max, ENCODER_BLOCKS);
        let dense = cfg.ffn == FfnKind::DenseMlp;

        let mut encoder = Vec::with_capacity(4);
        for i in 0..4 {
            let c = cfg.stage_channels[i];
            let name = format!("encoder.{i}");
            let embed = PatchEmbed::new(&mut store, &mut init, &format!("{name}.embed"), cfg.stage_in(i), c, 3, 2, 1, ratio)?;
            let mut block = |j: usize, spec| {
                TransformerBlock::new(
                    &mut store,
                    &mut init,
                    &format!("{name}.block{j}"),
                    c,
                    cfg.heads[i],
                    spec,
                    dense,
                    drops[2 * i + j],
                )
            };
            let b0 = block(0, WindowSpec::new(cfg.encoder_window))?;
            let b1 = block(1, WindowSpec::shifted(cfg.encoder_window))?;
            encoder.push(EncoderStage { embed, blocks: [b0, b1] });
        }

        let mut decoder = Vec::with_capacity(3);
        for i in 0..3 {
            let (c_dec, c_skip, c_out) = cfg.fusion_channels(i);
            let dims = FusionDims {
                c_dec,
                c_skip,
                c_out,
                heads: cfg.decoder_heads,
                window: cfg.decoder_window,
                ghost_ratio: ratio,
            };
            let concat = cfg.fusion == FusionKind::Concat;
            decoder.push(FusionStage::new(&mut store, &mut init, &format!("decoder.{i}"), dims, concat)?);
        }

        let c0 = cfg.stage_channels[0];
        let final_block = FinalBlock::new(&mut store, &mut init, "final", c0, c0, ratio)?;
        let head = Head::new(&mut store, &mut init, "head", c0, cfg.num_classes)?;
        let aux0 = Head::new(&mut store, &mut init, "aux.0", cfg.fusion_channels(1).2, cfg.num_classes)?;
        let aux1 = Head::new(&mut store, &mut init, "aux.1", cfg.fusion_channels(2).2, cfg.num_classes)?;

        let encoder: [EncoderStage; 4] = encoder.try_into().expect("four encoder stages");
        let decoder: [FusionStage; 3] = decoder.try_into().expect("three decoder stages");
        Ok(Self {
            config: cfg.clone(),
            params: store,
            encoder,
            decoder,
            final_block,
            head,
            aux_heads: [aux0, aux1],
        })
    }

    /// Checks a `[B, C_in, D, H, W]` input against the model's contract.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let ok_rank = shape.len() == 5 && shape[1] == self.config.in_channels && shape[0] > 0;
        if !ok_rank {
            return Err(shape_err(
                "forward",
                format!("expected [B, {}, D, H, W], got {:?}", self.config.in_channels, shape),
            ));
        }
        if shape[2..].iter().any(|&s| s < INPUT_MULTIPLE || s % INPUT_MULTIPLE != 0) {
            return Err(shape_err(
                "forward",
                format!(
                    "spatial extents {:?} must be positive multiples of {}; pad the input first",
                    &shape[2..],
                    INPUT_MULTIPLE
                ),
            ));
        }
        Ok(())
    }

    /// Records a forward pass in `ctx`.
    pub fn forward_graph<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<SegVars> {
        self.check_input(ctx.graph.shape(x))?;
        let mut skips = Vec::with_capacity(4);
        let mut h = x;
        for stage in &self.encoder {
            let (t, grid) = stage.forward(ctx, h)?;
            h = unflatten_tokens(&mut ctx.graph, t, grid)?;
            skips.push(h);
        }
        let mut d = skips[3];
        let mut aux = Vec::with_capacity(2);
        for (i, stage) in self.decoder.iter().enumerate() {
            d = stage.forward(ctx, d, skips[2 - i])?;
            if i >= 1 {
                aux.push(self.aux_heads[i - 1].forward(ctx, d)?);
            }
        }
        let f = self.final_block.forward(ctx, d)?;
        let logits = self.head.forward(ctx, f)?;
        Ok(SegVars {
            logits,
            aux: [aux[0], aux[1]],
        })
    }

    /// Evaluation-mode forward.
    pub fn forward(&self, x: &Tensor<f32>) -> Result<SegOutput> {
        forward_with(self, &self.params, x)
    }

    /// Total parameters.
    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Parameter totals grouped by the first `depth` components of their
    /// dotted names, in construction order.
    pub fn param_breakdown(&self, depth: usize) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for p in self.params.iter() {
            let key = p.name.split('.').take(depth).collect::<Vec<_>>().join(".");
            match out.last_mut() {
                Some((k, n)) if *k == key => *n += p.value.numel(),
                _ => out.push((key, p.value.numel())),
            }
        }
        out
    }

    /// Every transformer block, in depth order.
    pub fn blocks(&self) -> impl Iterator<Item = &TransformerBlock> {
        self.encoder.iter().flat_map(|s| s.blocks.iter())
    }
}

/// Evaluation forward of `model`'s topology with an arbitrary-precision copy
/// of its parameters.
pub fn forward_with<T: Scalar>(model: &Model, params: &ParamStore<T>, x: &Tensor<T>) -> Result<SegOutput<T>> {
    let mut ctx = Ctx::eval(params);
    let xv = ctx.graph.constant(x.clone());
    let out = model.forward_graph(&mut ctx, xv)?;
    Ok(SegOutput {
        logits: ctx.graph.value(out.logits).clone(),
        aux: out.aux.iter().map(|&v| ctx.graph.value(v).clone()).collect(),
    })
}

/// Closed-form parameter count of a configuration, independent of the
/// layer implementations.
pub fn analytic_param_count(cfg: &ModelConfig) -> usize {
    let r = cfg.effective_ratio();
    let ghost = |cin: usize, cout: usize| {
        let c1 = cout / r;
        cin * c1 * 27 + (cout - c1) * 27
    };
    let w = cfg.encoder_window;
    let table = (2 * w[0] - 1) * (2 * w[1] - 1) * (2 * w[2] - 1);
    let mut total = 0;
    for i in 0..4 {
        let c = cfg.stage_channels[i];
        total += ghost(cfg.stage_in(i), c) + 27 * c + 2 * c;
        let ffn = match cfg.ffn {
            FfnKind::MixFfn => {
                let rank = (c / 2).max(64);
                2 * c * rank + 27 * rank
            }
            FfnKind::DenseMlp => 8 * c * c,
        };
        total += 2 * (4 * c + 4 * c * c + table * cfg.heads[i] + ffn);
    }
    for i in 0..3 {
        let (cd, ce, co) = cfg.fusion_channels(i);
        total += ce * cd + cd;
        total += match cfg.fusion {
            FusionKind::CrossAttention => {
                let hidden = (co / 16).max(1);
                cd * cd + 2 * cd * cd + cd * co + 2 * co * hidden + ghost(co, co) + 2 * co
            }
            FusionKind::Concat => co * 2 * cd * 27 + 2 * co,
        };
    }
    let c0 = cfg.stage_channels[0];
    let k = cfg.num_classes;
    total + ghost(c0, c0) + 2 * c0 + k * c0 + k * cfg.stage_channels[1] + k * c0
}

/// Zero-pads a `[B, C, D, H, W]` volume on the far side of each spatial axis
/// up to the next multiple of `multiple`.
pub fn pad_to_multiple<T: Scalar>(x: &Tensor<T>, multiple: usize) -> Result<Tensor<T>> {
    let [d, h, w] = x.spatial()?;
    let m = multiple.max(1);
    let p = [d, h, w].map(|s| s.max(1).div_ceil(m) * m);
    let (b, c) = (x.shape()[0], x.shape()[1]);
    let mut out = Tensor::zeros(vec![b, c, p[0], p[1], p[2]]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..b * c {
        for i in 0..d {
            for j in 0..h {
                let s = ((plane * d + i) * h + j) * w;
                let t = ((plane * p[0] + i) * p[1] + j) * p[2];
                dst[t..t + w].copy_from_slice(&src[s..s + w]);
            }
        }
    }
    Ok(out)
}
