//! Test-time augmentation over the eight axis-flip combinations.

use super::augment::SpatialTransform;
use crate::error::{shape_err, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// Softmax over the class axis of `[B, K, ...]` logits.
pub fn softmax_channels(logits: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = logits.shape();
    if s.len() < 2 {
        return Err(shape_err("softmax_channels", format!("{:?}", s)));
    }
    let (b, k) = (s[0], s[1]);
    let n: usize = s[2..].iter().product();
    let src = logits.data();
    let mut out = vec![0f32; src.len()];
    for bi in 0..b {
        let base = bi * k * n;
        for i in 0..n {
            let m = (0..k).map(|c| src[base + c * n + i]).fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0;
            for c in 0..k {
                let e = (src[base + c * n + i] - m).exp();
                out[base + c * n + i] = e;
                z += e;
            }
            for c in 0..k {
                out[base + c * n + i] /= z;
            }
        }
    }
    Tensor::new(s.to_vec(), out)
}

/// All eight flip combinations, identity first.
pub fn flip_set() -> [SpatialTransform; 8] {
    std::array::from_fn(|i| SpatialTransform::flips([i & 4 != 0, i & 2 != 0, i & 1 != 0]))
}

/// Mean class probabilities over the eight flipped copies of `x`, each
/// prediction flipped back before averaging. `predict` maps `[B, C, ...]`
/// inputs to `[B, K, ...]` logits.
pub fn tta_predict_with(
    x: &Tensor<f32>,
    mut predict: impl FnMut(&Tensor<f32>) -> Result<Tensor<f32>>,
) -> Result<Tensor<f32>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut shape = Vec::new();
    for t in flip_set() {
        // Flips are involutions, so the same transform undoes itself.
        let probs = t.apply(&softmax_channels(&predict(&t.apply(x)?)?)?)?;
        shape = probs.shape().to_vec();
        match acc.as_mut() {
            None => acc = Some(probs.data().iter().map(|&p| p as f64).collect()),
            Some(a) => a.iter_mut().zip(probs.data()).for_each(|(a, &p)| *a += p as f64),
        }
    }
    let acc = acc.expect("eight predictions");
    Tensor::new(shape, acc.into_iter().map(|a| (a / 8.0) as f32).collect())
}

/// TTA with the model's evaluation forward.
pub fn tta_predict(model: &Model, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    tta_predict_with(x, |v| Ok(model.forward(v)?.logits))
}
