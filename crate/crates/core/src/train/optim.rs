use crate::error::{arg_err, Result};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// AdamW with decoupled weight decay and bias-corrected moments:
///
/// ```text
/// p <- p - lr * wd * p
/// m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
/// p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// ```
#[derive(Clone, Debug)]
pub struct AdamW<T: Scalar = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    frozen: Vec<bool>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, weight_decay: f64) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
            frozen: vec![false; store.len()],
        }
    }

    /// Excludes every parameter named by one of `prefixes`, matched on whole
    /// dot-separated components (`decoder.0` covers `decoder.0.wq`).
    pub fn freeze_prefixes(&mut self, store: &ParamStore<T>, prefixes: &[String]) -> usize {
        let mut n = 0;
        for (f, p) in self.frozen.iter_mut().zip(store.iter()) {
            if prefixes.iter().any(|pre| name_has_prefix(&p.name, pre)) {
                *f = true;
                n += 1;
            }
        }
        n
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen[i]
    }

    /// One update from the accumulated gradients in `store`.
    pub fn update(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(arg_err("adamw", "parameter store changed since construction"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, eps) = (T::one(), T::lit(self.eps));
        let decay = T::lit(1.0 - lr * self.weight_decay);
        let step = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        for (i, p) in store.iter_mut().enumerate() {
            if self.frozen[i] {
                continue;
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let g = p.grad.data();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                *w = *w * decay - step * m[j] / ((v[j] * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

fn name_has_prefix(name: &str, prefix: &str) -> bool {
    name == prefix || (name.starts_with(prefix) && name.as_bytes().get(prefix.len()) == Some(&b'.'))
}
