//! Full-resolution keypoint detection: head, target encoding and losses.

mod head;
mod loss;
mod targets;

pub use head::{DetectionGrads, DetectionHead, DetectionHeadConfig, DetectionOutputs, HEATMAP_PRIOR};
pub use loss::{
    detection_loss, focal_loss, focal_loss_grad, size_loss, size_loss_grad, DetLossConfig, DetLossReport,
    FocalParams,
};
pub use targets::{encode_targets, gaussian_radius, gaussian_sigma, DetectionTargets, Keypoint, TargetConfig};
