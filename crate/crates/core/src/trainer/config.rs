use serde::{Deserialize, Serialize};

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::model::{LossConfig, ModelConfig};
use crate::postprocess::PostprocessConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Per-epoch learning-rate factor.
    pub gamma: f64,
    /// Validate and checkpoint every this many epochs (and after the last).
    pub val_every: usize,
    pub seed: u64,
    /// Square side images are resized to; 0 keeps the native size.
    pub input_size: usize,
    pub augment: bool,
    pub augmentation: AugmentConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub postprocess: PostprocessConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.05,
            batch_size: 4,
            gamma: 0.98,
            val_every: 5,
            seed: 0,
            input_size: 320,
            augment: true,
            augmentation: AugmentConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            postprocess: PostprocessConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Checks every field and reports all problems in one error.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be positive".to_string());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            problems.push(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            problems.push(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size < 2 {
            problems.push(format!("batch_size must be at least 2 (batch statistics), got {}", self.batch_size));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            problems.push(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if self.val_every == 0 {
            problems.push("val_every must be positive".to_string());
        }
        if self.input_size > 0 {
            if let Err(e) = self.model.backbone.check_input_dims(self.input_size, self.input_size) {
                problems.push(format!("input_size: {e}"));
            }
        } else if self.augment && self.augmentation.crop_scale.0 < 1.0 {
            problems.push("random crops need a fixed input_size".to_string());
        }
        if self.loss.det_weight < 0.0 || self.loss.seg_weight < 0.0 {
            problems.push("loss weights must be non-negative".to_string());
        }
        if !(self.postprocess.score_threshold >= 0.0 && self.postprocess.score_threshold <= 1.0) {
            problems.push(format!("postprocess.score_threshold must be in [0, 1], got {}", self.postprocess.score_threshold));
        }
        if self.postprocess.top_k == 0 {
            problems.push("postprocess.top_k must be positive".to_string());
        }
        for (what, r) in [("model.backbone", self.model.backbone.validate()), ("augmentation", self.augmentation.validate())] {
            if let Err(e) = r {
                problems.push(format!("{what}: {e}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.gamma.powi(epoch as i32)
    }
}
