//! Whole-volume prediction with padding to the input multiple.

use super::tta::{softmax_channels, tta_predict};
use crate::error::{shape_err, Result};
use crate::model::{pad_to_multiple, Model, INPUT_MULTIPLE};
use crate::tensor::Tensor;
use crate::train::predict_labels;

/// Crops the spatial axes of `[B, C, D, H, W]` to `grid`.
pub fn crop<T: crate::tensor::Scalar>(x: &Tensor<T>, grid: [usize; 3]) -> Result<Tensor<T>> {
    let [d, h, w] = x.spatial()?;
    if grid[0] > d || grid[1] > h || grid[2] > w {
        return Err(shape_err("crop", format!("{:?} exceeds {:?}", grid, [d, h, w])));
    }
    let (b, c) = (x.shape()[0], x.shape()[1]);
    let mut out = Vec::with_capacity(b * c * grid.iter().product::<usize>());
    for plane in 0..b * c {
        for i in 0..grid[0] {
            for j in 0..grid[1] {
                let s = ((plane * d + i) * h + j) * w;
                out.extend_from_slice(&x.data()[s..s + grid[2]]);
            }
        }
    }
    Tensor::new(vec![b, c, grid[0], grid[1], grid[2]], out)
}

/// Class probabilities of a `[B, C, D, H, W]` volume of any extent. The
/// input is zero-padded to the network multiple and the result cropped back.
pub fn predict_probs(model: &Model, x: &Tensor<f32>, tta: bool) -> Result<Tensor<f32>> {
    let grid = x.spatial()?;
    let padded = pad_to_multiple(x, INPUT_MULTIPLE)?;
    let probs = if tta {
        tta_predict(model, &padded)?
    } else {
        softmax_channels(&model.forward(&padded)?.logits)?
    };
    crop(&probs, grid)
}

/// Arg-max labels `[B, D, H, W]` of a volume.
pub fn predict_volume(model: &Model, x: &Tensor<f32>, tta: bool) -> Result<Vec<u8>> {
    predict_labels(&predict_probs(model, x, tta)?)
}
