//! Detection AP and segmentation IoU.

mod detection;
mod report;
mod segmentation;

pub use crate::geometry::box_iou;
pub use detection::{
    average_precision, evaluate_detections, matched_counts, pr_curve, ApResult, DetectionMetrics, PrPoint, IOU_THRESHOLDS,
    MAX_DETECTIONS,
};
pub use report::{ImageDiagnostics, MetricsReport, SegmentationMetrics};
pub use segmentation::{segmentation_iou, ConfusionCounts};
