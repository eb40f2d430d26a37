use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::model::SegVars;
use crate::tensor::{Scalar, Tensor};

/// Deep-supervision weight and Dice smoothing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub aux_weight: f64,
    pub dice_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            aux_weight: 0.4,
            dice_eps: 1e-5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.aux_weight >= 0.0 && self.aux_weight.is_finite()) {
            errs.push(format!("aux_weight: {} must be finite and >= 0", self.aux_weight));
        }
        if !(self.dice_eps > 0.0 && self.dice_eps.is_finite()) {
            errs.push(format!("dice_eps: {} must be finite and > 0", self.dice_eps));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Loss graph handles; `dice` and `ce` belong to the main output.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub dice: Var,
    pub ce: Var,
}

/// `Dice + CE` of one prediction; returns `(dice, ce, sum)`.
pub fn seg_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &Arc<[u8]>,
    eps: f64,
) -> Result<(Var, Var, Var)> {
    let d = g.dice_loss(logits, labels.clone(), eps)?;
    let c = g.cross_entropy(logits, labels.clone())?;
    let s = g.add(d, c)?;
    Ok((d, c, s))
}

/// `L(main) + lambda * (L(aux_0) + L(aux_1))`, with auxiliary logits
/// trilinearly upsampled to the label resolution first. With `lambda == 0`
/// the auxiliary outputs are not touched and the total is the main loss.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    out: &SegVars,
    labels: &Arc<[u8]>,
    cfg: &LossConfig,
) -> Result<LossVars> {
    cfg.validate()?;
    let (dice, ce, main) = seg_loss(g, out.logits, labels, cfg.dice_eps)?;
    if cfg.aux_weight == 0.0 {
        return Ok(LossVars { total: main, dice, ce });
    }
    let full = g.shape(out.logits)[2..].to_vec();
    let mut aux_sum = None;
    for &a in &out.aux {
        let s = g.shape(a)[2..].to_vec();
        let scale = full[0] / s[0].max(1);
        if (0..3).any(|i| s[i] * scale != full[i]) {
            return Err(shape_err(
                "total_loss",
                format!("auxiliary extent {:?} is not an integer fraction of {:?}", s, full),
            ));
        }
        let up = g.upsample_trilinear(a, scale)?;
        let (_, _, l) = seg_loss(g, up, labels, cfg.dice_eps)?;
        aux_sum = Some(match aux_sum {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    let aux = aux_sum.ok_or_else(|| arg_err("total_loss", "no auxiliary outputs"))?;
    let weighted = g.scale(aux, T::lit(cfg.aux_weight));
    let total = g.add(main, weighted)?;
    Ok(LossVars { total, dice, ce })
}

fn eval_scalar<T: Scalar>(logits: &Tensor<T>, f: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>) -> Result<T> {
    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let l = f(&mut g, x)?;
    Ok(g.value(l).item())
}

/// Soft Dice loss of `[B, K, D, H, W]` logits against `[B, D, H, W]` labels.
pub fn dice_loss<T: Scalar>(logits: &Tensor<T>, labels: &[u8], eps: f64) -> Result<T> {
    let labels: Arc<[u8]> = labels.into();
    eval_scalar(logits, |g, x| g.dice_loss(x, labels, eps))
}

/// Mean voxelwise cross-entropy.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> Result<T> {
    let labels: Arc<[u8]> = labels.into();
    eval_scalar(logits, |g, x| g.cross_entropy(x, labels))
}

/// Arg-max class per voxel of `[B, K, ...]` scores (logits or probabilities).
pub fn predict_labels<T: Scalar>(scores: &Tensor<T>) -> Result<Vec<u8>> {
    let s = scores.shape();
    if s.len() < 2 || s[1] == 0 || s[1] > 256 {
        return Err(shape_err("predict_labels", format!("scores {:?}", s)));
    }
    let (b, k) = (s[0], s[1]);
    let n: usize = s[2..].iter().product();
    let d = scores.data();
    let mut out = Vec::with_capacity(b * n);
    for bi in 0..b {
        for i in 0..n {
            let mut best = 0;
            for c in 1..k {
                if d[(bi * k + c) * n + i] > d[(bi * k + best) * n + i] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    Ok(out)
}

/// Hard Dice `2|P∩T| / (|P| + |T|)` per class; 1 when a class is absent
/// from both.
pub fn dice_scores(pred: &[u8], target: &[u8], classes: usize) -> Result<Vec<f64>> {
    if pred.len() != target.len() {
        return Err(shape_err("dice_scores", format!("{} predictions, {} labels", pred.len(), target.len())));
    }
    let mut inter = vec![0usize; classes];
    let mut p = vec![0usize; classes];
    let mut t = vec![0usize; classes];
    for (&a, &b) in pred.iter().zip(target) {
        let (a, b) = (a as usize, b as usize);
        if a >= classes || b >= classes {
            return Err(arg_err("dice_scores", format!("label outside [0, {classes})")));
        }
        p[a] += 1;
        t[b] += 1;
        if a == b {
            inter[a] += 1;
        }
    }
    Ok((0..classes)
        .map(|c| {
            if p[c] + t[c] == 0 {
                1.0
            } else {
                2.0 * inter[c] as f64 / (p[c] + t[c]) as f64
            }
        })
        .collect())
}
