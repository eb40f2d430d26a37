//! Desk-scale experiment harness: synthetic data, augmentation, training,
//! test-time augmentation, benchmarking and volume files.

pub mod augment;
pub mod bench;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod infer;
pub mod trainer;
pub mod tta;
pub mod volume;

pub use augment::{augment, SpatialTransform};
pub use bench::{bench, BenchReport};
pub use config::{RunConfig, TrainConfig};
pub use data::SyntheticTask;
pub use trainer::{csv_header, fusion_param_prefixes, EvalRecord, StepRecord, TrainReport, Trainer};
pub use tta::{tta_predict, tta_predict_with};
pub use volume::Volume;
