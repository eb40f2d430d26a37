//! Forward-pass latency measurement.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{arg_err, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// Latency statistics of `repeats` timed forwards after `warmup` untimed ones.
#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub input_shape: Vec<usize>,
    pub warmup: usize,
    pub threads: usize,
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub params: usize,
    pub flops: u64,
    pub ms_per_gflop: f64,
    /// Set when the median exceeds 1.5x the mean, a sign of a noisy machine.
    pub noisy: bool,
}

/// `(mean, median, p95)`; p95 uses the nearest-rank definition.
pub fn summarize(samples: &[f64]) -> (f64, f64, f64) {
    if samples.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let mean = s.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    (mean, median, s[rank - 1])
}

/// Times evaluation forwards on a fixed random input. Only the forward call
/// sits inside the timer.
pub fn bench(model: &Model, input_shape: &[usize], warmup: usize, repeats: usize) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(arg_err("bench", "repeats must be positive"));
    }
    model.check_input(input_shape)?;
    let flops = model.estimate_flops(input_shape)?.total;
    let mut rng = ChaCha8Rng::seed_from_u64(0xbe9c);
    let x = Tensor::from_fn(input_shape.to_vec(), |_| rng.random_range(-1.0f32..1.0));
    for _ in 0..warmup {
        model.forward(&x)?;
    }
    let mut samples_ms = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        let out = model.forward(&x)?;
        samples_ms.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    let (mean_ms, median_ms, p95_ms) = summarize(&samples_ms);
    Ok(BenchReport {
        input_shape: input_shape.to_vec(),
        warmup,
        threads: 1,
        samples_ms,
        mean_ms,
        median_ms,
        p95_ms,
        params: model.param_count(),
        flops,
        ms_per_gflop: mean_ms / (flops as f64 / 1e9),
        noisy: median_ms > 1.5 * mean_ms,
    })
}
