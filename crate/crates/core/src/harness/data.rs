//! Synthetic nested-ellipsoid volumes.
//!
//! Class `c` occupies the voxels inside `c` nested ellipsoids, so the label
//! of a voxel is the number of shells containing it. Each class has its own
//! mean intensity per input channel; Gaussian noise is added on top.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Generator settings. Channel and class counts come from the model config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTask {
    /// Cube edge length.
    pub size: usize,
    pub noise_std: f64,
    /// Every class must cover at least this fraction of each sample...
    pub min_class_fraction: f64,
    /// ...and at most this fraction.
    pub max_class_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            size: 32,
            noise_std: 0.1,
            min_class_fraction: 0.02,
            max_class_fraction: 0.9,
            seed: 0,
        }
    }
}

/// Attempts before a sample is declared impossible under the bounds.
const MAX_ATTEMPTS: usize = 1000;

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.size < 4 {
            errs.push(format!("task.size: {} must be at least 4", self.size));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            errs.push(format!("task.noise_std: {} must be finite and >= 0", self.noise_std));
        }
        let (lo, hi) = (self.min_class_fraction, self.max_class_fraction);
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            errs.push(format!(
                "task.min_class_fraction/max_class_fraction: need 0 < {lo} <= {hi} <= 1"
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Sample `index` as `([C, S, S, S] intensities, [S, S, S] labels)`.
    pub fn sample(&self, index: u64, channels: usize, classes: usize) -> Result<(Vec<f32>, Vec<u8>)> {
        self.validate()?;
        if classes < 2 || classes > 256 || channels == 0 {
            return Err(Error::Config(vec![format!(
                "task: needs >= 1 channel and 2..=256 classes, got {channels} and {classes}"
            )]));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        for _ in 0..MAX_ATTEMPTS {
            let labels = self.draw_labels(&mut rng, classes);
            if self.frequencies_ok(&labels, classes) {
                let x = self.draw_intensities(&mut rng, &labels, channels, classes);
                return Ok((x, labels));
            }
        }
        Err(Error::Config(vec![format!(
            "task: no sample satisfies the class-fraction bounds after {MAX_ATTEMPTS} attempts"
        )]))
    }

    /// `n` consecutive samples starting at `first`, stacked into
    /// `([n, C, S, S, S], [n, S, S, S])`.
    pub fn batch(&self, first: u64, n: usize, channels: usize, classes: usize) -> Result<(Tensor<f32>, Vec<u8>)> {
        let s = self.size;
        let mut x = Vec::with_capacity(n * channels * s * s * s);
        let mut y = Vec::with_capacity(n * s * s * s);
        for i in 0..n as u64 {
            let (xi, yi) = self.sample(first + i, channels, classes)?;
            x.extend(xi);
            y.extend(yi);
        }
        Ok((Tensor::new(vec![n, channels, s, s, s], x)?, y))
    }

    pub fn class_fractions(labels: &[u8], classes: usize) -> Vec<f64> {
        let mut counts = vec![0usize; classes];
        for &l in labels {
            counts[l as usize] += 1;
        }
        counts.iter().map(|&c| c as f64 / labels.len() as f64).collect()
    }

    fn frequencies_ok(&self, labels: &[u8], classes: usize) -> bool {
        Self::class_fractions(labels, classes)
            .iter()
            .all(|&f| f >= self.min_class_fraction && f <= self.max_class_fraction)
    }

    fn draw_labels(&self, rng: &mut ChaCha8Rng, classes: usize) -> Vec<u8> {
        let s = self.size as f64;
        let center: [f64; 3] = std::array::from_fn(|_| s * rng.random_range(0.4..0.6));
        let radii: [f64; 3] = std::array::from_fn(|_| s * rng.random_range(0.25..0.42));
        // Shell k scales the outer ellipsoid by a decreasing factor.
        let mut scales = Vec::with_capacity(classes - 1);
        let mut f = 1.0;
        for _ in 1..classes {
            scales.push(f);
            f *= rng.random_range(0.5..0.75);
        }
        let n = self.size;
        let mut labels = Vec::with_capacity(n * n * n);
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let p = [z as f64 + 0.5, y as f64 + 0.5, x as f64 + 0.5];
                    let r2: f64 = (0..3).map(|a| ((p[a] - center[a]) / radii[a]).powi(2)).sum();
                    let depth = scales.iter().filter(|&&k| r2 <= k * k).count();
                    labels.push(depth as u8);
                }
            }
        }
        labels
    }

    fn draw_intensities(&self, rng: &mut ChaCha8Rng, labels: &[u8], channels: usize, classes: usize) -> Vec<f32> {
        // Per (channel, class) mean in [-1, 1], drawn so classes stay separable.
        let means: Vec<f64> = (0..channels * classes)
            .map(|i| {
                let c = i % classes;
                let base = -1.0 + 2.0 * c as f64 / (classes - 1) as f64;
                base + rng.random_range(-0.15..0.15)
            })
            .collect();
        let noise = Normal::new(0.0, self.noise_std.max(f64::MIN_POSITIVE)).expect("finite std");
        let mut out = Vec::with_capacity(channels * labels.len());
        for ch in 0..channels {
            for &l in labels {
                let n = if self.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
                out.push((means[ch * classes + l as usize] + n) as f32);
            }
        }
        out
    }
}
