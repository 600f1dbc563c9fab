use serde::Serialize;

use crate::error::{Error, Result};

/// Pixel confusion counts accumulated over a dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_negative: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    // Nothing to disagree about counts as full agreement.
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    /// Adds one image; both masks are 0/1 with equal length.
    pub fn add(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!("prediction has {} pixels, mask has {}", pred.len(), truth.len())));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            if p > 1 || t > 1 {
                return Err(Error::Invalid("masks must be binary".into()));
            }
            match (p, t) {
                (1, 1) => self.true_positive += 1,
                (1, 0) => self.false_positive += 1,
                (0, 1) => self.false_negative += 1,
                _ => self.true_negative += 1,
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.true_positive += other.true_positive;
        self.false_positive += other.false_positive;
        self.false_negative += other.false_negative;
        self.true_negative += other.true_negative;
    }

    pub fn target_iou(&self) -> f64 {
        ratio(self.true_positive, self.true_positive + self.false_positive + self.false_negative)
    }

    pub fn background_iou(&self) -> f64 {
        ratio(self.true_negative, self.true_negative + self.false_positive + self.false_negative)
    }

    pub fn miou(&self) -> f64 {
        (self.target_iou() + self.background_iou()) / 2.0
    }
}

/// `(target IoU, background IoU, mIoU)` of a single pair of masks.
pub fn segmentation_iou(pred: &[u8], truth: &[u8]) -> Result<(f64, f64, f64)> {
    let mut c = ConfusionCounts::default();
    c.add(pred, truth)?;
    Ok((c.target_iou(), c.background_iou(), c.miou()))
}
