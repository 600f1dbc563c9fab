use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{box_iou, BBox};
use crate::postprocess::Detection;

/// Detections kept per image, best first.
pub const MAX_DETECTIONS: usize = 100;

/// 0.50, 0.55, …, 0.95.
pub const IOU_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

const RECALL_POINTS: usize = 101;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ApResult {
    pub ap: f64,
    /// False when there is no ground truth at all; `ap` is then 0.
    pub defined: bool,
}

/// Per-image greedy matching; returns `(score, is_true_positive)` per kept detection.
fn match_image(dets: &[Detection], gts: &[BBox], threshold: f64) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order.truncate(MAX_DETECTIONS);
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|d| {
            let mut best_iou = threshold.min(1.0 - 1e-10);
            let mut best = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let iou = box_iou(&dets[d].bbox, gt);
                if iou >= best_iou {
                    best_iou = iou;
                    best = Some(g);
                }
            }
            if let Some(g) = best {
                taken[g] = true;
            }
            (dets[d].score, best.is_some())
        })
        .collect()
}

/// All kept detections ranked by score with their match flags, plus the
/// ground-truth count.
fn ranked(detections: &[Vec<Detection>], ground_truth: &[Vec<BBox>], threshold: f64) -> Result<(Vec<(f64, bool)>, usize)> {
    if detections.len() != ground_truth.len() {
        return Err(Error::Shape(format!(
            "{} detection lists for {} images",
            detections.len(),
            ground_truth.len()
        )));
    }
    let total_gt = ground_truth.iter().map(Vec::len).sum();
    let mut all: Vec<(f64, bool)> = detections
        .iter()
        .zip(ground_truth)
        .flat_map(|(d, g)| match_image(d, g, threshold))
        .collect();
    // Stable, so equal scores keep image order.
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok((all, total_gt))
}

/// One point of the raw precision/recall curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrPoint {
    pub score: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Precision and recall after each ranked detection.
pub fn pr_curve(detections: &[Vec<Detection>], ground_truth: &[Vec<BBox>], threshold: f64) -> Result<Vec<PrPoint>> {
    let (all, total_gt) = ranked(detections, ground_truth, threshold)?;
    let mut tp = 0usize;
    Ok(all
        .iter()
        .enumerate()
        .map(|(i, &(score, hit))| {
            tp += hit as usize;
            PrPoint {
                score,
                recall: if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 },
                precision: tp as f64 / (i + 1) as f64,
            }
        })
        .collect())
}

/// COCO-style AP at one IoU threshold with 101-point recall interpolation.
///
/// `detections[i]` and `ground_truth[i]` belong to image `i`.
pub fn average_precision(detections: &[Vec<Detection>], ground_truth: &[Vec<BBox>], threshold: f64) -> Result<ApResult> {
    let curve = pr_curve(detections, ground_truth, threshold)?;
    if ground_truth.iter().all(Vec::is_empty) {
        return Ok(ApResult { ap: 0.0, defined: false });
    }
    let recall: Vec<f64> = curve.iter().map(|p| p.recall).collect();
    let mut precision: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&v| v < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    Ok(ApResult { ap: sum / RECALL_POINTS as f64, defined: true })
}

/// Number of detections matched at `threshold`, per image.
pub fn matched_counts(detections: &[Vec<Detection>], ground_truth: &[Vec<BBox>], threshold: f64) -> Vec<usize> {
    detections
        .iter()
        .zip(ground_truth)
        .map(|(d, g)| match_image(d, g, threshold).iter().filter(|m| m.1).count())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectionMetrics {
    /// Mean over [`IOU_THRESHOLDS`].
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub per_threshold: Vec<(f64, f64)>,
    pub defined: bool,
}

pub fn evaluate_detections(detections: &[Vec<Detection>], ground_truth: &[Vec<BBox>]) -> Result<DetectionMetrics> {
    let mut per_threshold = Vec::with_capacity(IOU_THRESHOLDS.len());
    let mut defined = true;
    for &t in &IOU_THRESHOLDS {
        let r = average_precision(detections, ground_truth, t)?;
        defined &= r.defined;
        per_threshold.push((t, r.ap));
    }
    let ap = per_threshold.iter().map(|p| p.1).sum::<f64>() / per_threshold.len() as f64;
    Ok(DetectionMetrics { ap, ap50: per_threshold[0].1, ap75: per_threshold[5].1, per_threshold, defined })
}
