use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::default_groups;

/// Convolution used by the patch embeddings and refinement layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    Ghost,
    Standard,
}

/// Feed-forward layer inside transformer blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnKind {
    MixFfn,
    DenseMlp,
}

/// Skip-fusion strategy of the decoder stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    CrossAttention,
    Concat,
}

/// Full architectural description. Four encoder stages; decoder widths mirror
/// the encoder skips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub stage_channels: [usize; 4],
    pub heads: [usize; 4],
    pub encoder_window: [usize; 3],
    pub decoder_window: usize,
    pub decoder_heads: usize,
    pub ghost_ratio: usize,
    pub drop_path_max: f64,
    pub conv: ConvKind,
    pub ffn: FfnKind,
    pub fusion: FusionKind,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 4,
            num_classes: 4,
            stage_channels: [32, 64, 128, 256],
            heads: [1, 2, 4, 8],
            encoder_window: [4, 4, 4],
            decoder_window: 4,
            decoder_heads: 4,
            ghost_ratio: 2,
            drop_path_max: 0.1,
            conv: ConvKind::Ghost,
            ffn: FfnKind::MixFfn,
            fusion: FusionKind::CrossAttention,
            seed: 0,
        }
    }
}

/// Spatial multiple every input extent must satisfy (four stride-2 stages).
pub const INPUT_MULTIPLE: usize = 16;

/// Transformer blocks in the encoder (two per stage).
pub const ENCODER_BLOCKS: usize = 8;

impl ModelConfig {
    /// Desk-scale configuration: widths 8/16/32/64, three classes.
    pub fn tiny() -> Self {
        Self {
            num_classes: 3,
            stage_channels: [8, 16, 32, 64],
            ..Self::default()
        }
    }

    /// Ratio applied to ghost layers; 1 for the standard-convolution variant.
    pub fn effective_ratio(&self) -> usize {
        match self.conv {
            ConvKind::Ghost => self.ghost_ratio,
            ConvKind::Standard => 1,
        }
    }

    /// Input channels of encoder stage `i`.
    pub fn stage_in(&self, i: usize) -> usize {
        if i == 0 {
            self.in_channels
        } else {
            self.stage_channels[i - 1]
        }
    }

    /// `(c_dec, c_skip, c_out)` of decoder stage `i` (0 is the deepest).
    pub fn fusion_channels(&self, i: usize) -> (usize, usize, usize) {
        let c = &self.stage_channels;
        (c[3 - i], c[2 - i], c[2 - i])
    }

    /// Checks every invariant, reporting each violation with its field name.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.in_channels == 0 {
            errs.push("in_channels: must be positive".to_string());
        }
        if !(2..=255).contains(&self.num_classes) {
            errs.push(format!("num_classes: {} outside 2..=255", self.num_classes));
        }
        let ratio = self.effective_ratio();
        if self.ghost_ratio == 0 {
            errs.push("ghost_ratio: must be positive".to_string());
        }
        for (i, (&c, &h)) in self.stage_channels.iter().zip(&self.heads).enumerate() {
            if c == 0 {
                errs.push(format!("stage_channels[{i}]: must be positive"));
                continue;
            }
            if h == 0 || c % h != 0 {
                errs.push(format!("heads[{i}]: {h} does not divide stage_channels[{i}] = {c}"));
            }
            if ratio > 0 && c / ratio == 0 {
                errs.push(format!("stage_channels[{i}]: {c} leaves no primary channel at ghost_ratio {ratio}"));
            }
        }
        if self.encoder_window.contains(&0) {
            errs.push("encoder_window: extents must be positive".to_string());
        }
        if self.decoder_window == 0 {
            errs.push("decoder_window: must be positive".to_string());
        }
        if self.stage_channels.iter().all(|&c| c > 0) {
            for i in 0..3 {
                let (cd, _, co) = self.fusion_channels(i);
                if self.fusion == FusionKind::CrossAttention {
                    if self.decoder_heads == 0 || cd % self.decoder_heads != 0 {
                        errs.push(format!(
                            "decoder_heads: {} does not divide decoder width {} (stage_channels[{}])",
                            self.decoder_heads,
                            cd,
                            3 - i
                        ));
                    }
                    if co >= 16 && co % 16 != 0 {
                        errs.push(format!(
                            "stage_channels[{}]: {} is not a multiple of the squeeze-excitation reduction 16",
                            2 - i,
                            co
                        ));
                    }
                }
                if co % default_groups(co) != 0 {
                    errs.push(format!(
                        "stage_channels[{}]: {} not divisible into {} groups",
                        2 - i,
                        co,
                        default_groups(co)
                    ));
                }
            }
        }
        if !(0.0..1.0).contains(&self.drop_path_max) {
            errs.push(format!("drop_path_max: {} outside [0, 1)", self.drop_path_max));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Canonical JSON used for fingerprints.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("plain config serializes")
    }
}
