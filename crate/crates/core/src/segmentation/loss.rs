use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegLossConfig {
    pub target_weight: f64,
    pub background_weight: f64,
    pub smooth: f64,
}

impl Default for SegLossConfig {
    fn default() -> Self {
        Self { target_weight: 10.0, background_weight: 0.1, smooth: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegLossReport {
    pub dice_target: f64,
    pub dice_background: f64,
    pub total: f64,
}

fn check(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("prediction has {} values but mask has {}", pred.len(), truth.len())));
    }
    Ok(())
}

/// `(2 Σ t·p + s) / (Σ (t² + p²) + s)` over all pixels.
pub fn dice_smooth(pred: &[f64], truth: &[f64], smooth: f64) -> Result<f64> {
    check(pred, truth)?;
    let (mut inter, mut union) = (0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        inter += t * p;
        union += t * t + p * p;
    }
    Ok((2.0 * inter + smooth) / (union + smooth))
}

/// Smooth dice and its gradient w.r.t. the prediction.
pub fn dice_smooth_grad(pred: &[f64], truth: &[f64], smooth: f64) -> Result<(f64, Vec<f64>)> {
    check(pred, truth)?;
    let (mut inter, mut union) = (0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        inter += t * p;
        union += t * t + p * p;
    }
    let num = 2.0 * inter + smooth;
    let den = union + smooth;
    let grad = pred.iter().zip(truth).map(|(&p, &t)| (2.0 * t * den - num * 2.0 * p) / (den * den)).collect();
    Ok((num / den, grad))
}

/// Weighted dice loss over the target class and its complement, with the
/// gradient w.r.t. the target probabilities. `mask` must be 0/1.
pub fn segmentation_loss(probs: &[f64], mask: &[f64], config: &SegLossConfig) -> Result<(SegLossReport, Vec<f64>)> {
    check(probs, mask)?;
    if let Some(v) = mask.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Invalid(format!("mask value {v} is not binary")));
    }
    let (dt, gt) = dice_smooth_grad(probs, mask, config.smooth)?;
    let inv_p: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
    let inv_t: Vec<f64> = mask.iter().map(|t| 1.0 - t).collect();
    let (db, gb) = dice_smooth_grad(&inv_p, &inv_t, config.smooth)?;
    let total = config.target_weight * (1.0 - dt) + config.background_weight * (1.0 - db);
    let grad = gt
        .iter()
        .zip(&gb)
        .map(|(a, b)| -config.target_weight * a + config.background_weight * b)
        .collect();
    Ok((SegLossReport { dice_target: dt, dice_background: db, total }, grad))
}
