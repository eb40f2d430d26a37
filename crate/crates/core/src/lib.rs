//! RefineFormer3D: a hierarchical windowed-transformer network for volumetric
//! segmentation, built on a small reverse-mode autodiff tensor engine.
//!
//! Layout conventions: volumes are `[B, C, D, H, W]`; token sequences are
//! `[B, N, C]` with `N = D * H * W` in row-major D-H-W order.

pub mod autograd;
pub mod error;
pub mod harness;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
