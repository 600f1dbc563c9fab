//! Heatmap peak extraction and box assembly.

use serde::{Deserialize, Serialize};

use crate::data::{CocoResult, TARGET_CATEGORY};
use crate::detection::DetectionOutputs;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use mtnet_nn::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocessConfig {
    pub top_k: usize,
    pub score_threshold: f64,
    /// Shift centres by the offset branch output when the model has one.
    pub use_offset: bool,
    /// Probability threshold for binarizing segmentation maps.
    pub mask_threshold: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { top_k: 100, score_threshold: 0.25, use_offset: false, mask_threshold: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Peak {
    pub x: usize,
    pub y: usize,
    pub class: usize,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub class: usize,
}

/// Scored boxes for one image, highest score first.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DetectionResult {
    pub boxes: Vec<Detection>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Local maxima of a `C×H×W` heatmap under a 3×3 neighbourhood.
///
/// A pixel qualifies when no neighbour is larger. Equal-valued qualifying
/// pixels that touch (8-connectivity) form one plateau, represented by its
/// smallest `(y, x)`. Peaks scoring below `threshold` are dropped and at most
/// `top_k` are returned, best first.
pub fn extract_peaks(heatmap: &[f64], channels: usize, height: usize, width: usize, top_k: usize, threshold: f64) -> Result<Vec<Peak>> {
    if top_k == 0 {
        return Err(Error::Config("top_k must be positive".into()));
    }
    let hw = height * width;
    if heatmap.len() != channels * hw {
        return Err(Error::Shape(format!("heatmap has {} values, expected {channels}×{height}×{width}", heatmap.len())));
    }
    let mut peaks = Vec::new();
    let neighbours = |x: usize, y: usize| {
        let ys = y.saturating_sub(1)..=(y + 1).min(height - 1);
        ys.flat_map(move |ny| (x.saturating_sub(1)..=(x + 1).min(width - 1)).map(move |nx| (nx, ny)))
            .filter(move |&(nx, ny)| (nx, ny) != (x, y))
    };
    for c in 0..channels {
        let plane = &heatmap[c * hw..(c + 1) * hw];
        let is_max: Vec<bool> = (0..hw)
            .map(|i| {
                let (x, y) = (i % width, i / width);
                plane[i] >= threshold && neighbours(x, y).all(|(nx, ny)| plane[ny * width + nx] <= plane[i])
            })
            .collect();
        let mut parent: Vec<usize> = (0..hw).collect();
        for i in (0..hw).filter(|&i| is_max[i]) {
            let (x, y) = (i % width, i / width);
            for (nx, ny) in neighbours(x, y) {
                let j = ny * width + nx;
                if is_max[j] && plane[j] == plane[i] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    // The smaller raster index is the smaller (y, x).
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    parent[hi] = lo;
                }
            }
        }
        for i in (0..hw).filter(|&i| is_max[i]) {
            if find(&mut parent, i) == i {
                peaks.push(Peak { x: i % width, y: i / width, class: c, score: plane[i] });
            }
        }
    }
    peaks.sort_by(|a, b| b.score.total_cmp(&a.score).then((a.class, a.y, a.x).cmp(&(b.class, b.y, b.x))));
    peaks.truncate(top_k);
    Ok(peaks)
}

/// Turns peaks into boxes centred on the peak with the predicted size
/// (at least one pixel per side), clipped to the image extent
/// `[-0.5, W-0.5] × [-0.5, H-0.5]`.
///
/// `size_map` is the width plane followed by the height plane; `offset`, if
/// given, has the same layout and shifts each centre.
pub fn assemble_boxes(peaks: &[Peak], size_map: &[f64], offset: Option<&[f64]>, height: usize, width: usize) -> Result<DetectionResult> {
    let hw = height * width;
    if size_map.len() != 2 * hw {
        return Err(Error::Shape(format!("size map has {} values, expected 2×{height}×{width}", size_map.len())));
    }
    if let Some(o) = offset {
        if o.len() != 2 * hw {
            return Err(Error::Shape(format!("offset map has {} values, expected 2×{height}×{width}", o.len())));
        }
    }
    let mut boxes = Vec::with_capacity(peaks.len());
    for p in peaks {
        if p.x >= width || p.y >= height {
            return Err(Error::Invalid(format!("peak ({}, {}) outside a {width}×{height} map", p.x, p.y)));
        }
        let i = p.y * width + p.x;
        let w = size_map[i].max(1.0);
        let h = size_map[hw + i].max(1.0);
        let (dx, dy) = offset.map_or((0.0, 0.0), |o| (o[i], o[hw + i]));
        let bbox = BBox::from_center(p.x as f64 + dx, p.y as f64 + dy, w, h).clip(
            -0.5,
            -0.5,
            width as f64 - 0.5,
            height as f64 - 0.5,
        );
        boxes.push(Detection { bbox, score: p.score, class: p.class });
    }
    Ok(DetectionResult { boxes })
}

/// Decodes image `index` of a batch of detection outputs.
pub fn decode<T: Real>(outputs: &DetectionOutputs<T>, index: usize, config: &PostprocessConfig) -> Result<DetectionResult> {
    let [_, c, h, w] = outputs.heatmap.shape();
    let to64 = |s: &[T]| s.iter().map(|v| v.as_f64()).collect::<Vec<f64>>();
    let heat = to64(outputs.heatmap.sample(index));
    let size = to64(outputs.size.sample(index));
    let offset = match (&outputs.offset, config.use_offset) {
        (Some(o), true) => Some(to64(o.sample(index))),
        _ => None,
    };
    let peaks = extract_peaks(&heat, c, h, w, config.top_k, config.score_threshold)?;
    assemble_boxes(&peaks, &size, offset.as_deref(), h, w)
}

/// COCO results entries for one image.
pub fn to_coco_results(result: &DetectionResult, image_id: u64) -> Vec<CocoResult> {
    result
        .boxes
        .iter()
        .map(|d| CocoResult {
            image_id,
            category_id: TARGET_CATEGORY + d.class as u64,
            bbox: d.bbox.to_coco(),
            score: d.score,
        })
        .collect()
}
