//! Full-batch training loop with periodic evaluation.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::augment;
use super::config::RunConfig;
use crate::error::Result;
use crate::model::{checkpoint, FusionKind, Model, ModelConfig};
use crate::nn::Ctx;
use crate::tensor::Tensor;
use crate::train::{dice_scores, predict_labels, total_loss, AdamW, LrSchedule};

/// First sample index of the held-out split.
pub const VAL_OFFSET: u64 = 1 << 32;

/// Header of the per-step metrics file.
pub fn csv_header(classes: usize) -> String {
    let mut h = String::from("step,lr,total_loss,dice_loss,ce_loss");
    for c in 1..classes {
        let _ = write!(h, ",dice_class_{c}");
    }
    h.push_str(",wall_ms");
    h
}

/// One optimizer step. `class_dice` holds the hard Dice of classes `1..K`
/// on the training batch as seen by that step's forward.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub total_loss: f64,
    pub dice_loss: f64,
    pub ce_loss: f64,
    pub class_dice: Vec<f64>,
    pub wall_ms: f64,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        let mut r = format!(
            "{},{:e},{},{},{}",
            self.step, self.lr, self.total_loss, self.dice_loss, self.ce_loss
        );
        for d in &self.class_dice {
            let _ = write!(r, ",{d}");
        }
        let _ = write!(r, ",{:.3}", self.wall_ms);
        r
    }
}

/// Evaluation-mode Dice of classes `1..K` after `step` updates.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub train_dice: Vec<f64>,
    pub val_dice: Vec<f64>,
}

/// Mean of per-class foreground scores.
pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl EvalRecord {
    pub fn train_mean(&self) -> f64 {
        mean(&self.train_dice)
    }

    pub fn val_mean(&self) -> f64 {
        mean(&self.val_dice)
    }
}

/// Outcome of [`Trainer::run`].
#[derive(Debug)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    /// First evaluated step whose training Dice met the target.
    pub reached_at: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

/// Names of the parameters that implement skip fusion.
pub fn fusion_param_prefixes(cfg: &ModelConfig) -> Vec<String> {
    let leaves: &[&str] = match cfg.fusion {
        FusionKind::CrossAttention => &["skip_proj", "wq", "wkv", "wo"],
        FusionKind::Concat => &["skip_proj", "conv"],
    };
    (0..3)
        .flat_map(|i| leaves.iter().map(move |l| format!("decoder.{i}.{l}")))
        .collect()
}

/// Foreground hard Dice per class of `[B, K, ...]` logits.
pub fn foreground_dice(logits: &Tensor<f32>, labels: &[u8], classes: usize) -> Result<Vec<f64>> {
    let pred = predict_labels(logits)?;
    Ok(dice_scores(&pred, labels, classes)?[1..].to_vec())
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub model: Model,
    opt: AdamW,
    schedule: LrSchedule,
    train_x: Tensor<f32>,
    train_y: Arc<[u8]>,
    val: Option<(Tensor<f32>, Vec<u8>)>,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::build(&cfg.model)?;
        let (c, k) = (cfg.model.in_channels, cfg.model.num_classes);
        let (train_x, train_y) = cfg.task.batch(0, cfg.train.train_volumes, c, k)?;
        let val = if cfg.train.val_volumes > 0 {
            Some(cfg.task.batch(VAL_OFFSET, cfg.train.val_volumes, c, k)?)
        } else {
            None
        };
        let mut opt = AdamW::new(&model.params, cfg.train.weight_decay);
        opt.freeze_prefixes(&model.params, &cfg.train.freeze);
        let t = &cfg.train;
        Ok(Self {
            schedule: LrSchedule::new(t.peak_lr, t.min_lr, t.warmup_steps, t.cosine_steps()),
            cfg: cfg.clone(),
            model,
            opt,
            train_x,
            train_y: train_y.into(),
            val,
            rng: ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x7472_6169_6e00),
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.opt
    }

    /// One forward/backward/update on the full training batch.
    pub fn step(&mut self) -> Result<StepRecord> {
        let started = Instant::now();
        let step = self.step + 1;
        let lr = self.schedule.lr(step);
        let (x, y) = if self.cfg.train.augment {
            let (x, y) = augment(&self.train_x, &self.train_y, &mut self.rng, self.cfg.train.augment_noise_std)?;
            (x, Arc::from(y))
        } else {
            (self.train_x.clone(), self.train_y.clone())
        };
        let (loss, dice, ce, logits, grads, bindings) = {
            let mut ctx = Ctx::train(&self.model.params, &mut self.rng);
            let xv = ctx.graph.constant(x);
            let out = self.model.forward_graph(&mut ctx, xv)?;
            let l = total_loss(&mut ctx.graph, &out, &y, &self.cfg.loss)?;
            let grads = ctx.graph.backward(l.total)?;
            let g = &ctx.graph;
            (
                g.value(l.total).item() as f64,
                g.value(l.dice).item() as f64,
                g.value(l.ce).item() as f64,
                g.value(out.logits).clone(),
                grads,
                ctx.bindings(),
            )
        };
        self.model.params.zero_grad();
        self.model.params.accumulate(&bindings, &grads);
        self.opt.update(&mut self.model.params, lr)?;
        self.step = step;
        Ok(StepRecord {
            step,
            lr,
            total_loss: loss,
            dice_loss: dice,
            ce_loss: ce,
            class_dice: foreground_dice(&logits, &y, self.cfg.model.num_classes)?,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Evaluation-mode Dice on the training and held-out volumes.
    pub fn evaluate(&self) -> Result<EvalRecord> {
        let k = self.cfg.model.num_classes;
        let train_dice = foreground_dice(&self.model.forward(&self.train_x)?.logits, &self.train_y, k)?;
        let val_dice = match &self.val {
            Some((x, y)) => foreground_dice(&self.model.forward(x)?.logits, y, k)?,
            None => Vec::new(),
        };
        Ok(EvalRecord {
            step: self.step,
            train_dice,
            val_dice,
        })
    }

    /// Runs to the configured step count (or the Dice target), writing
    /// `metrics.csv`, `eval.csv` and `model.ckpt` under `out` when given.
    pub fn run(&mut self, out: Option<&Path>) -> Result<TrainReport> {
        let k = self.cfg.model.num_classes;
        let mut files = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let mut m = BufWriter::new(File::create(dir.join("metrics.csv"))?);
                writeln!(m, "{}", csv_header(k))?;
                let mut e = BufWriter::new(File::create(dir.join("eval.csv"))?);
                writeln!(e, "step,train_mean_dice,val_mean_dice")?;
                Some((m, e))
            }
            None => None,
        };
        let mut report = TrainReport {
            steps: Vec::new(),
            evals: Vec::new(),
            reached_at: None,
            checkpoint: None,
            metrics: out.map(|d| d.join("metrics.csv")),
        };
        let t = self.cfg.train.clone();
        while self.step < t.steps {
            let rec = self.step()?;
            if let Some((m, _)) = files.as_mut() {
                writeln!(m, "{}", rec.csv_row())?;
            }
            report.steps.push(rec);
            if self.step % t.eval_every == 0 || self.step == t.steps {
                let ev = self.evaluate()?;
                if let Some((_, e)) = files.as_mut() {
                    writeln!(e, "{},{},{}", ev.step, ev.train_mean(), ev.val_mean())?;
                }
                let hit = ev.train_mean() >= t.target_dice;
                report.evals.push(ev);
                if hit && report.reached_at.is_none() {
                    report.reached_at = Some(self.step);
                    if t.stop_at_target {
                        break;
                    }
                }
            }
        }
        if let (Some(dir), Some((mut m, mut e))) = (out, files) {
            m.flush()?;
            e.flush()?;
            let path = dir.join("model.ckpt");
            checkpoint::save(&self.model, &path)?;
            report.checkpoint = Some(path);
        }
        Ok(report)
    }
}
