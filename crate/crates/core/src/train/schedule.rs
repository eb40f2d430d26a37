use serde::{Deserialize, Serialize};

/// Linear warm-up from 0 to `peak`, then cosine annealing to `min` over
/// `t_max` steps, constant afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub min: f64,
    pub warmup_steps: usize,
    pub t_max: usize,
}

impl LrSchedule {
    pub fn new(peak: f64, min: f64, warmup_steps: usize, t_max: usize) -> Self {
        Self {
            peak,
            min,
            warmup_steps,
            t_max,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let t = step - self.warmup_steps;
        if t == 0 {
            return self.peak;
        }
        if t >= self.t_max {
            return self.min;
        }
        let c = (std::f64::consts::PI * t as f64 / self.t_max as f64).cos();
        self.min + 0.5 * (self.peak - self.min) * (1.0 + c)
    }
}
