//! Pyramid-pooling segmentation head and the weighted smooth dice loss.

mod head;
mod loss;

pub use head::{PspHead, PYRAMID_BINS};
pub use loss::{dice_smooth, dice_smooth_grad, segmentation_loss, SegLossConfig, SegLossReport};
