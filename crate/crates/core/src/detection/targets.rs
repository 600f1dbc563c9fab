use serde::{Deserialize, Serialize};

use crate::data::BoxAnnotation;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    /// IoU a box shifted by the radius must still reach.
    pub min_overlap: f64,
    /// Lower bound on the kernel standard deviation.
    pub min_sigma: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self { min_overlap: 0.7, min_sigma: 0.6 }
    }
}

/// Largest corner displacement that keeps IoU with the original box at
/// `min_overlap` or above, taken as the minimum over three cases: both corners
/// shifted the same way, the box shrunk on every side, and grown on every side.
pub fn gaussian_radius(width: f64, height: f64, min_overlap: f64) -> Result<f64> {
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::Invalid(format!("box size must be positive, got {width}×{height}")));
    }
    if !(min_overlap > 0.0 && min_overlap < 1.0) {
        return Err(Error::Invalid(format!("min_overlap must be in (0, 1), got {min_overlap}")));
    }
    let (s, p, o) = (width + height, width * height, min_overlap);
    let shifted = (s - (s * s - 4.0 * p * (1.0 - o) / (1.0 + o)).sqrt()) / 2.0;
    let shrunk = (2.0 * s - (4.0 * s * s - 16.0 * (1.0 - o) * p).sqrt()) / 8.0;
    let grown = (-2.0 * o * s + (4.0 * o * o * s * s - 16.0 * o * (o - 1.0) * p).sqrt()) / (8.0 * o);
    Ok(shifted.min(shrunk).min(grown).max(0.0))
}

/// Kernel standard deviation: a third of the radius, floored at `min_sigma`.
pub fn gaussian_sigma(width: f64, height: f64, config: &TargetConfig) -> Result<f64> {
    if config.min_sigma <= 0.0 {
        return Err(Error::Config(format!("min_sigma must be positive, got {}", config.min_sigma)));
    }
    Ok((gaussian_radius(width, height, config.min_overlap)? / 3.0).max(config.min_sigma))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Keypoint {
    /// Integer heatmap location `(x, y)`: the floored box centre.
    pub pixel: (usize, usize),
    /// Exact box centre.
    pub center: (f64, f64),
    /// Box `(width, height)` in pixels.
    pub size: (f64, f64),
    /// Centre minus pixel; the offset branch's target.
    pub offset: (f64, f64),
    pub sigma: f64,
}

/// Encoded ground truth for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionTargets {
    pub height: usize,
    pub width: usize,
    /// Row-major `H×W` keypoint heatmap in `[0, 1]`.
    pub heatmap: Vec<f64>,
    /// One keypoint per box, in box order.
    pub keypoints: Vec<Keypoint>,
}

impl DetectionTargets {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.heatmap[y * self.width + x]
    }
}

/// Splats one Gaussian per box onto an `H×W` heatmap, merging overlaps by
/// element-wise maximum.
pub fn encode_targets(boxes: &[BoxAnnotation], height: usize, width: usize, config: &TargetConfig) -> Result<DetectionTargets> {
    let mut heatmap = vec![0.0; height * width];
    let mut keypoints = Vec::with_capacity(boxes.len());
    for b in boxes {
        if b.x1 > b.x2 || b.y1 > b.y2 || b.x2 >= width || b.y2 >= height {
            return Err(Error::Annotation(format!(
                "box ({}, {}, {}, {}) does not fit a {width}×{height} image",
                b.x1, b.y1, b.x2, b.y2
            )));
        }
        let center = b.center();
        let size = b.size();
        let pixel = (center.0.floor() as usize, center.1.floor() as usize);
        let sigma = gaussian_sigma(size.0, size.1, config)?;
        let reach = (3.0 * sigma).ceil() as usize;
        let denom = 2.0 * sigma * sigma;
        let (px, py) = pixel;
        for y in py.saturating_sub(reach)..=(py + reach).min(height - 1) {
            let dy = y as f64 - py as f64;
            for x in px.saturating_sub(reach)..=(px + reach).min(width - 1) {
                let dx = x as f64 - px as f64;
                let v = (-(dx * dx + dy * dy) / denom).exp();
                let cell = &mut heatmap[y * width + x];
                if v > *cell {
                    *cell = v;
                }
            }
        }
        keypoints.push(Keypoint {
            pixel,
            center,
            size,
            offset: (center.0 - px as f64, center.1 - py as f64),
            sigma,
        });
    }
    Ok(DetectionTargets { height, width, heatmap, keypoints })
}
