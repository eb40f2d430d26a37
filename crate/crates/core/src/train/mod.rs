//! Segmentation losses, the AdamW optimizer and the learning-rate schedule.

mod loss;
mod optim;
mod schedule;

pub use loss::{
    cross_entropy, dice_loss, dice_scores, predict_labels, seg_loss, total_loss, LossConfig, LossVars,
};
pub use optim::AdamW;
pub use schedule::LrSchedule;
