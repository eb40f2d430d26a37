use crate::error::Result;
use crate::nn::ffn::mixffn_rank;
use crate::nn::window::{attention_flops, WindowSpec};
use crate::tensor::conv_out_extent;

use super::{ConvKind, FfnKind, FusionKind, Model, ModelConfig};

/// Analytic floating-point operation counts (2 per multiply-accumulate) of
/// convolutions, linear maps and attention products. Normalization,
/// activations and interpolation are not counted.
#[derive(Clone, Debug, Default)]
pub struct FlopReport {
    pub total: u64,
    pub breakdown: Vec<(String, u64)>,
}

impl FlopReport {
    fn add(&mut self, name: impl Into<String>, flops: u64) {
        self.total += flops;
        self.breakdown.push((name.into(), flops));
    }
}

fn vox(g: [usize; 3]) -> u64 {
    g.iter().map(|&v| v as u64).product()
}

/// `2 * cout * cin/groups * k^3 * output voxels`.
pub fn conv_flops(cin: usize, cout: usize, k: usize, groups: usize, out: [usize; 3]) -> u64 {
    2 * (cout as u64) * (cin / groups) as u64 * (k as u64).pow(3) * vox(out)
}

fn ghost_flops(cfg: &ModelConfig, cin: usize, cout: usize, out: [usize; 3]) -> u64 {
    let r = match cfg.conv {
        ConvKind::Ghost => cfg.ghost_ratio,
        ConvKind::Standard => 1,
    };
    let c1 = cout / r;
    conv_flops(cin, c1, 3, 1, out) + conv_flops(cout - c1, cout - c1, 3, cout - c1, out)
}

/// FLOPs of one forward pass on an input of shape `[B, C, D, H, W]`.
pub fn estimate_flops(cfg: &ModelConfig, input: &[usize]) -> Result<FlopReport> {
    let model_shape_ok = input.len() == 5;
    if !model_shape_ok {
        return Err(crate::error::shape_err("estimate_flops", format!("expected [B, C, D, H, W], got {:?}", input)));
    }
    cfg.validate()?;
    let b = input[0] as u64;
    let mut rep = FlopReport::default();
    let mut grid = [input[2], input[3], input[4]];
    let mut grids = Vec::with_capacity(4);
    for i in 0..4 {
        let c = cfg.stage_channels[i];
        let e = |s| conv_out_extent(s, 3, 2, 1).unwrap_or(0);
        grid = grid.map(e);
        grids.push(grid);
        let n = vox(grid);
        let embed = ghost_flops(cfg, cfg.stage_in(i), c, grid) + conv_flops(c, c, 3, c, grid);
        rep.add(format!("encoder.{i}.embed"), b * embed);
        for j in 0..2 {
            let attn = attention_flops(grid, WindowSpec::new(cfg.encoder_window).window, c);
            rep.add(format!("encoder.{i}.block{j}.attn"), b * attn);
            let ffn = match cfg.ffn {
                FfnKind::MixFfn => {
                    let r = mixffn_rank(c) as u64;
                    2 * n * (c as u64) * r * 2 + conv_flops(r as usize, r as usize, 3, r as usize, grid)
                }
                FfnKind::DenseMlp => 2 * n * 8 * (c as u64).pow(2),
            };
            rep.add(format!("encoder.{i}.block{j}.ffn"), b * ffn);
        }
    }
    for i in 0..3 {
        let (cd, ce, co) = cfg.fusion_channels(i);
        let g = grids[2 - i];
        let n = vox(g);
        let proj = 2 * n * (ce * cd) as u64;
        let body = match cfg.fusion {
            FusionKind::CrossAttention => {
                let w = [cfg.decoder_window; 3];
                let spec = WindowSpec::new(w);
                let slots = spec.windows(g) as u64 * spec.tokens() as u64;
                // the shared counter charges a C_d x C_d output projection
                let attn = attention_flops(g, w, cd) - 2 * slots * (cd * cd) as u64 + 2 * slots * (cd * co) as u64;
                let se = 2 * 2 * (co * (co / 16).max(1)) as u64;
                attn + se + ghost_flops(cfg, co, co, g)
            }
            FusionKind::Concat => conv_flops(2 * cd, co, 3, 1, g),
        };
        rep.add(format!("decoder.{i}"), b * (proj + body));
    }
    let c0 = cfg.stage_channels[0];
    let full = [input[2], input[3], input[4]];
    rep.add("final", b * ghost_flops(cfg, c0, c0, full));
    let k = cfg.num_classes;
    rep.add("head", b * conv_flops(c0, k, 1, 1, full));
    rep.add("aux.0", b * conv_flops(cfg.stage_channels[1], k, 1, 1, grids[1]));
    rep.add("aux.1", b * conv_flops(c0, k, 1, 1, grids[0]));
    Ok(rep)
}

impl Model {
    pub fn estimate_flops(&self, input: &[usize]) -> Result<FlopReport> {
        estimate_flops(&self.config, input)
    }
}
