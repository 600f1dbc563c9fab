use serde::{Deserialize, Serialize};

use super::targets::{DetectionTargets, Keypoint};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FocalParams {
    pub alpha: f64,
    pub beta: f64,
    /// Predictions are clamped to `[eps, 1 - eps]` before taking logs.
    pub eps: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 2.0, beta: 4.0, eps: 1e-6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetLossConfig {
    pub focal: FocalParams,
    /// Weight of the size term.
    pub size_weight: f64,
}

impl Default for DetLossConfig {
    fn default() -> Self {
        Self { focal: FocalParams::default(), size_weight: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetLossReport {
    pub heatmap: f64,
    pub size: f64,
    pub total: f64,
    pub keypoints: usize,
}

fn check_len(pred: usize, target: usize) -> Result<()> {
    if pred != target {
        return Err(Error::Shape(format!("prediction has {pred} values but target has {target}")));
    }
    Ok(())
}

/// Per-pixel focal term and its derivative w.r.t. the (unclamped) prediction.
fn focal_term(p: f64, y: f64, fp: &FocalParams) -> (f64, f64) {
    let pc = p.clamp(fp.eps, 1.0 - fp.eps);
    let inside = p > fp.eps && p < 1.0 - fp.eps;
    let (a, b) = (fp.alpha, fp.beta);
    if y == 1.0 {
        let loss = -(1.0 - pc).powf(a) * pc.ln();
        let grad = a * (1.0 - pc).powf(a - 1.0) * pc.ln() - (1.0 - pc).powf(a) / pc;
        (loss, if inside { grad } else { 0.0 })
    } else {
        let w = (1.0 - y).powf(b);
        let loss = -w * pc.powf(a) * (1.0 - pc).ln();
        let grad = -w * (a * pc.powf(a - 1.0) * (1.0 - pc).ln() - pc.powf(a) / (1.0 - pc));
        (loss, if inside { grad } else { 0.0 })
    }
}

/// Pixel-wise focal loss summed over the map and divided by `max(N, 1)`.
///
/// Pixels with target exactly 1 are keypoints.
pub fn focal_loss(pred: &[f64], target: &[f64], num_keypoints: usize, params: &FocalParams) -> Result<f64> {
    check_len(pred.len(), target.len())?;
    let sum: f64 = pred.iter().zip(target).map(|(&p, &y)| focal_term(p, y, params).0).sum();
    Ok(sum / num_keypoints.max(1) as f64)
}

/// Focal loss and its gradient w.r.t. every prediction.
pub fn focal_loss_grad(pred: &[f64], target: &[f64], num_keypoints: usize, params: &FocalParams) -> Result<(f64, Vec<f64>)> {
    check_len(pred.len(), target.len())?;
    let norm = num_keypoints.max(1) as f64;
    let mut sum = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let (l, g) = focal_term(p, y, params);
            sum += l;
            g / norm
        })
        .collect();
    Ok((sum / norm, grad))
}

fn size_index(kp: &Keypoint, height: usize, width: usize) -> Result<usize> {
    let (x, y) = kp.pixel;
    if x >= width || y >= height {
        return Err(Error::Annotation(format!("keypoint ({x}, {y}) outside a {width}×{height} map")));
    }
    Ok(y * width + x)
}

/// Mean over keypoints of the L1 distance (summed over width and height)
/// between the predicted and true size at the keypoint pixel; 0 without keypoints.
///
/// `size_map` holds the width plane followed by the height plane.
pub fn size_loss(size_map: &[f64], height: usize, width: usize, keypoints: &[Keypoint]) -> Result<f64> {
    Ok(size_loss_grad(size_map, height, width, keypoints)?.0)
}

/// Size loss and its (sub)gradient w.r.t. the size map.
pub fn size_loss_grad(size_map: &[f64], height: usize, width: usize, keypoints: &[Keypoint]) -> Result<(f64, Vec<f64>)> {
    let hw = height * width;
    check_len(size_map.len(), 2 * hw)?;
    let mut grad = vec![0.0; 2 * hw];
    if keypoints.is_empty() {
        return Ok((0.0, grad));
    }
    let n = keypoints.len() as f64;
    let mut sum = 0.0;
    for kp in keypoints {
        let i = size_index(kp, height, width)?;
        for (plane, truth) in [(0, kp.size.0), (1, kp.size.1)] {
            let d = size_map[plane * hw + i] - truth;
            sum += d.abs();
            grad[plane * hw + i] += d.signum() * (d != 0.0) as u8 as f64 / n;
        }
    }
    Ok((sum / n, grad))
}

/// Detection loss of one image with gradients w.r.t. the heatmap and size map.
pub fn detection_loss(
    heatmap: &[f64],
    size_map: &[f64],
    targets: &DetectionTargets,
    config: &DetLossConfig,
) -> Result<(DetLossReport, Vec<f64>, Vec<f64>)> {
    let n = targets.keypoints.len();
    let (lk, g_hm) = focal_loss_grad(heatmap, &targets.heatmap, n, &config.focal)?;
    let (ls, mut g_size) = size_loss_grad(size_map, targets.height, targets.width, &targets.keypoints)?;
    g_size.iter_mut().for_each(|g| *g *= config.size_weight);
    let report = DetLossReport { heatmap: lk, size: ls, total: lk + config.size_weight * ls, keypoints: n };
    Ok((report, g_hm, g_size))
}
