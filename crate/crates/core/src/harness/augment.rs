//! Geometry-exact augmentation: axis flips, 90-degree rotations and
//! intensity noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// A flip/rotation of a `[D, H, W]` grid. Rotation by `quarter_turns * 90`
/// degrees acts in the plane of `plane = (a, b)`, with `a < b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct SpatialTransform {
    pub flip: [bool; 3],
    pub plane: (usize, usize),
    pub quarter_turns: u8,
}

impl SpatialTransform {
    pub fn flips(flip: [bool; 3]) -> Self {
        Self {
            flip,
            plane: (0, 1),
            quarter_turns: 0,
        }
    }

    pub fn random(rng: &mut ChaCha8Rng, grid: [usize; 3]) -> Self {
        let flip = std::array::from_fn(|_| rng.random_bool(0.5));
        let plane = [(0, 1), (0, 2), (1, 2)][rng.random_range(0..3)];
        let mut quarter_turns = rng.random_range(0..4u8);
        if grid[plane.0] != grid[plane.1] {
            // Odd turns would change the shape; keep the half turn only.
            quarter_turns &= 2;
        }
        Self {
            flip,
            plane,
            quarter_turns,
        }
    }

    /// Output grid of the transform.
    pub fn out_grid(&self, grid: [usize; 3]) -> [usize; 3] {
        let mut g = grid;
        if self.quarter_turns % 2 == 1 {
            g.swap(self.plane.0, self.plane.1);
        }
        g
    }

    /// `map[o]` is the source voxel of output voxel `o` (row-major over
    /// `out_grid`). Flips apply first, then the rotation.
    pub fn source_map(&self, grid: [usize; 3]) -> Result<Vec<usize>> {
        let (a, b) = self.plane;
        if a >= b || b > 2 {
            return Err(shape_err("augment", format!("invalid rotation plane {:?}", self.plane)));
        }
        if self.quarter_turns % 2 == 1 && grid[a] != grid[b] {
            return Err(shape_err("augment", format!("quarter turn in plane {:?} of grid {:?}", self.plane, grid)));
        }
        let out = self.out_grid(grid);
        let n = grid.iter().product();
        let mut map = Vec::with_capacity(n);
        for z in 0..out[0] {
            for y in 0..out[1] {
                for x in 0..out[2] {
                    let mut p = [z, y, x];
                    // Undo the rotation: out(p) = rotated(in) at p.
                    for _ in 0..self.quarter_turns % 4 {
                        // One quarter turn maps (u, v) -> (v, n - 1 - u); its inverse is below.
                        let (u, v) = (p[a], p[b]);
                        p[a] = grid[a] - 1 - v;
                        p[b] = u;
                    }
                    for ax in 0..3 {
                        if self.flip[ax] {
                            p[ax] = grid[ax] - 1 - p[ax];
                        }
                    }
                    map.push((p[0] * grid[1] + p[1]) * grid[2] + p[2]);
                }
            }
        }
        Ok(map)
    }

    /// Applies the transform to a `[B, C, D, H, W]` tensor.
    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let grid = x.spatial()?;
        let map = self.source_map(grid)?;
        let out = self.out_grid(grid);
        let n = map.len();
        let mut data = Vec::with_capacity(x.numel());
        for plane in x.data().chunks(n) {
            data.extend(map.iter().map(|&s| plane[s]));
        }
        Tensor::new(vec![x.shape()[0], x.shape()[1], out[0], out[1], out[2]], data)
    }

    /// Applies the transform to `[B, D, H, W]` labels.
    pub fn apply_labels(&self, labels: &[u8], grid: [usize; 3]) -> Result<Vec<u8>> {
        let map = self.source_map(grid)?;
        let n = map.len();
        if labels.len() % n != 0 {
            return Err(shape_err("augment", format!("{} labels for grid {:?}", labels.len(), grid)));
        }
        Ok(labels.chunks(n).flat_map(|l| map.iter().map(move |&s| l[s])).collect())
    }
}

/// Augments each sample of a batch independently: random flips and rotation,
/// then Gaussian noise of std `noise_std` on the intensities only.
pub fn augment(
    x: &Tensor<f32>,
    labels: &[u8],
    rng: &mut ChaCha8Rng,
    noise_std: f64,
) -> Result<(Tensor<f32>, Vec<u8>)> {
    let grid = x.spatial()?;
    let (b, c) = (x.shape()[0], x.shape()[1]);
    let n: usize = grid.iter().product();
    if labels.len() != b * n {
        return Err(shape_err("augment", format!("{} labels for {} samples of {:?}", labels.len(), b, grid)));
    }
    let mut xs = Vec::with_capacity(x.numel());
    let mut ys = Vec::with_capacity(labels.len());
    let mut out_grid = grid;
    for i in 0..b {
        let t = if grid[0] == grid[1] && grid[1] == grid[2] {
            SpatialTransform::random(rng, grid)
        } else {
            // Mixed shapes within a batch must stay uniform; flips only.
            SpatialTransform::flips(std::array::from_fn(|_| rng.random_bool(0.5)))
        };
        let xi = Tensor::new(vec![1, c, grid[0], grid[1], grid[2]], x.data()[i * c * n..(i + 1) * c * n].to_vec())?;
        xs.extend_from_slice(t.apply(&xi)?.data());
        ys.extend(t.apply_labels(&labels[i * n..(i + 1) * n], grid)?);
        out_grid = t.out_grid(grid);
    }
    if noise_std > 0.0 {
        let noise = Normal::new(0.0, noise_std).map_err(|e| arg_err("augment", e.to_string()))?;
        for v in &mut xs {
            *v += noise.sample(rng) as f32;
        }
    }
    let out = Tensor::new(vec![b, c, out_grid[0], out_grid[1], out_grid[2]], xs)?;
    Ok((out, ys))
}
