//! Command-line front end: describe, gradcheck, train, infer, bench.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use refineformer::harness::gradcheck::{end_to_end, op_suite, MODEL_TOL, OP_TOL};
use refineformer::harness::infer::predict_volume;
use refineformer::harness::volume::{self, Volume};
use refineformer::harness::{bench, RunConfig, Trainer};
use refineformer::model::{checkpoint, Model};
use refineformer::Error;

#[derive(Parser)]
#[command(name = "refineformer", version, about = "Volumetric segmentation network: inspection, training and benchmarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Device {
    Cpu,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (JSON); defaults to the built-in desk-scale setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "cpu")]
    device: Device,
}

impl Common {
    fn load(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
                RunConfig::from_json(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the configuration, per-module parameter counts and FLOPs.
    Describe {
        #[command(flatten)]
        common: Common,
        /// Spatial extent D,H,W for the FLOP estimate (default: the task cube).
        #[arg(long, value_delimiter = ',')]
        input: Option<Vec<usize>>,
    },
    /// Run the 64-bit finite-difference gradient suite.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Accepted for clarity; the suite always runs in 64-bit.
        #[arg(long = "f64")]
        f64: bool,
        /// Cube extent of the end-to-end check.
        #[arg(long, default_value_t = 16)]
        extent: usize,
        /// Skip the end-to-end model check.
        #[arg(long)]
        ops_only: bool,
    },
    /// Train on synthetic volumes; writes metrics.csv, eval.csv and model.ckpt.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Segment a raw volume file with a checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Intensity volume shaped [C, D, H, W] or [B, C, D, H, W].
        #[arg(long)]
        input: PathBuf,
        /// Output label volume, shaped like the input without the channel axis.
        #[arg(long)]
        out: PathBuf,
        /// Average probabilities over the eight flip combinations.
        #[arg(long)]
        tta: bool,
        #[arg(long, value_enum, default_value = "cpu")]
        device: Device,
    },
    /// Time evaluation forwards.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Input shape B,C,D,H,W (default: one task cube).
        #[arg(long, value_delimiter = ',')]
        input: Option<Vec<usize>>,
        #[arg(long, default_value_t = 200)]
        repeats: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        /// Print the full report, samples included, as JSON.
        #[arg(long)]
        json: bool,
    },
}

/// Failure classes and their exit codes.
enum Failure {
    Validation(String),
    Numeric(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Numeric(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Numeric(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) | Error::Volume(_) | Error::Checkpoint(_) => Failure::Io(msg),
            Error::Shape { .. } | Error::InvalidArgument { .. } | Error::Config(_) | Error::Json(_) => {
                Failure::Validation(msg)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Describe { common, input } => describe(&common.load()?, input),
        Command::Gradcheck {
            common,
            extent,
            ops_only,
            ..
        } => gradcheck(&common.load()?, extent, ops_only),
        Command::Train { common, steps, out } => {
            let mut cfg = common.load()?;
            if let Some(s) = steps {
                cfg.train.steps = s;
                cfg.validate()?;
            }
            train(&cfg, &out)
        }
        Command::Infer {
            checkpoint,
            input,
            out,
            tta,
            ..
        } => infer(&checkpoint, &input, &out, tta),
        Command::Bench {
            common,
            input,
            repeats,
            warmup,
            json,
        } => {
            let cfg = common.load()?;
            let shape = input.unwrap_or_else(|| {
                let s = cfg.task.size;
                vec![1, cfg.model.in_channels, s, s, s]
            });
            if shape.len() != 5 {
                return Err(Failure::Validation(format!("--input needs B,C,D,H,W, got {shape:?}")));
            }
            let model = Model::build(&cfg.model)?;
            let r = bench(&model, &shape, warmup, repeats)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
            } else {
                println!("input        {:?}", r.input_shape);
                println!("threads      {}", r.threads);
                println!("warm-up      {}", r.warmup);
                println!("samples      {}", r.samples_ms.len());
                println!("mean ms      {:.3}", r.mean_ms);
                println!("median ms    {:.3}", r.median_ms);
                println!("p95 ms       {:.3}", r.p95_ms);
                println!("params       {}", r.params);
                println!("GFLOPs       {:.4}", r.flops as f64 / 1e9);
                println!("ms/GFLOP     {:.4}", r.ms_per_gflop);
                if r.noisy {
                    println!("warning: median exceeds 1.5x mean; timings look noisy");
                }
            }
            Ok(())
        }
    }
}

fn describe(cfg: &RunConfig, input: Option<Vec<usize>>) -> Result<(), Failure> {
    let grid = input.unwrap_or_else(|| vec![cfg.task.size; 3]);
    if grid.len() != 3 {
        return Err(Failure::Validation(format!("--input needs D,H,W, got {grid:?}")));
    }
    let model = Model::build(&cfg.model)?;
    println!("{}", serde_json::to_string_pretty(cfg).expect("config serializes"));
    println!("\nparameters");
    let breakdown = model.param_breakdown(2);
    let total: usize = breakdown.iter().map(|(_, n)| n).sum();
    for (name, n) in &breakdown {
        println!("  {name:<24} {n:>12}");
    }
    println!("  {:<24} {:>12}", "total", total);
    let shape = [1, cfg.model.in_channels, grid[0], grid[1], grid[2]];
    let flops = model.estimate_flops(&shape)?;
    println!("\nFLOPs for input {:?}", shape);
    for (name, f) in &flops.breakdown {
        println!("  {name:<24} {f:>16}");
    }
    println!("  {:<24} {:>16}", "total", flops.total);
    Ok(())
}

fn gradcheck(cfg: &RunConfig, extent: usize, ops_only: bool) -> Result<(), Failure> {
    let mut failed = Vec::new();
    for r in op_suite()? {
        let ok = r.passed(OP_TOL);
        println!("{:<32} {:>5} elems  max rel err {:.3e}  {}", r.name, r.checked, r.max_rel_err, verdict(ok));
        if !ok {
            failed.push(r.name);
        }
    }
    if !ops_only {
        let r = end_to_end(&cfg.model, extent, 2, cfg.model.seed)?;
        let ok = r.passed(MODEL_TOL);
        println!("{:<32} {:>5} elems  max rel err {:.3e}  {}", r.name, r.checked, r.max_rel_err, verdict(ok));
        if !ok {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!("gradient check failed: {}", failed.join(", "))))
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn train(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let mut trainer = Trainer::new(cfg)?;
    let report = trainer.run(Some(out))?;
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg).expect("config serializes"))
        .map_err(|e| Failure::Io(e.to_string()))?;
    if let Some(last) = report.steps.last() {
        println!("steps        {}", last.step);
        println!("total loss   {:.5}", last.total_loss);
    }
    if let Some(ev) = report.evals.last() {
        println!("train dice   {:.4}", ev.train_mean());
        println!("val dice     {:.4}", ev.val_mean());
    }
    match report.reached_at {
        Some(s) => println!("target dice {} reached at step {s}", cfg.train.target_dice),
        None => println!("target dice {} not reached", cfg.train.target_dice),
    }
    println!("outputs in   {}", out.display());
    Ok(())
}

fn infer(ckpt: &Path, input: &Path, out: &Path, tta: bool) -> Result<(), Failure> {
    let model = checkpoint::load(ckpt)?;
    let x = match volume::read(input)? {
        Volume::Intensities(t) => t,
        Volume::Labels { .. } => return Err(Failure::Validation("input volume holds labels, not intensities".into())),
    };
    let unbatched = x.ndim() == 4;
    let batched = match x.ndim() {
        4 => {
            let mut s = x.shape().to_vec();
            s.insert(0, 1);
            x.reshape(s)?
        }
        5 => x,
        _ => {
            return Err(Failure::Validation(format!(
                "input volume must be [C, D, H, W] or [B, C, D, H, W], got {:?}",
                x.shape()
            )))
        }
    };
    let labels = predict_volume(&model, &batched, tta)?;
    let mut shape = vec![batched.shape()[0]];
    shape.extend_from_slice(&batched.shape()[2..]);
    if unbatched {
        shape.remove(0);
    }
    volume::write(out, &Volume::Labels { shape, data: labels })?;
    Ok(())
}
