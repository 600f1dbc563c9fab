//! The multi-task network: one backbone shared by the detection and
//! segmentation heads, plus the aggregated training objective.

use std::collections::BTreeMap;
use std::path::Path;

use mtnet_nn::module::join;
use mtnet_nn::{Checkpoint, Module, Real, Tensor, TensorMut, TensorRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, FeatureMap};
use crate::data::Sample;
use crate::detection::{
    detection_loss, encode_targets, DetLossConfig, DetLossReport, DetectionGrads, DetectionHead, DetectionHeadConfig,
    DetectionOutputs, DetectionTargets, TargetConfig,
};
use crate::error::{Error, Result};
use crate::segmentation::{segmentation_loss, PspHead, SegLossConfig, SegLossReport};

/// Which heads are built and trained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    #[serde(alias = "seg")]
    SegOnly,
    #[serde(alias = "det")]
    DetOnly,
    #[default]
    Multitask,
}

impl TaskMode {
    pub fn has_detection(self) -> bool {
        matches!(self, TaskMode::DetOnly | TaskMode::Multitask)
    }

    pub fn has_segmentation(self) -> bool {
        matches!(self, TaskMode::SegOnly | TaskMode::Multitask)
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskMode::SegOnly => "seg_only",
            TaskMode::DetOnly => "det_only",
            TaskMode::Multitask => "multitask",
        }
    }
}

impl std::str::FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seg" | "seg_only" => Ok(TaskMode::SegOnly),
            "det" | "det_only" => Ok(TaskMode::DetOnly),
            "multitask" => Ok(TaskMode::Multitask),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected seg, det or multitask)"))),
        }
    }
}

/// Task mode plus where the backbone weights came from, if pretrained.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMode {
    pub task: TaskMode,
    pub pretrained_from: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub detection: DetectionHeadConfig,
    pub mode: ModelMode,
}

/// Loss weights and target encoding settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub det_weight: f64,
    pub seg_weight: f64,
    pub detection: DetLossConfig,
    pub segmentation: SegLossConfig,
    pub targets: TargetConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            det_weight: 3.0,
            seg_weight: 1.0,
            detection: DetLossConfig::default(),
            segmentation: SegLossConfig::default(),
            targets: TargetConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TotalLossReport {
    pub det: f64,
    pub seg: f64,
    pub total: f64,
}

/// `det_weight · L_det + seg_weight · L_seg`, absent terms counting as zero.
pub fn total_loss(
    det: Option<&DetLossReport>,
    seg: Option<&SegLossReport>,
    det_weight: f64,
    seg_weight: f64,
) -> Result<TotalLossReport> {
    if det.is_none() && seg.is_none() {
        return Err(Error::Mode("total loss needs at least one task loss".into()));
    }
    let d = det.map_or(0.0, |r| r.total);
    let s = seg.map_or(0.0, |r| r.total);
    Ok(TotalLossReport { det: d, seg: s, total: det_weight * d + seg_weight * s })
}

/// Head outputs for a batch; absent heads yield mode errors on access.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutputs<T> {
    pub detection: Option<DetectionOutputs<T>>,
    /// Target probabilities `[N, 1, H, W]`.
    pub segmentation: Option<Tensor<T>>,
}

impl<T> ModelOutputs<T> {
    pub fn detection(&self) -> Result<&DetectionOutputs<T>> {
        self.detection
            .as_ref()
            .ok_or_else(|| Error::Mode("detection output requested from a model without a detection head".into()))
    }

    pub fn segmentation(&self) -> Result<&Tensor<T>> {
        self.segmentation
            .as_ref()
            .ok_or_else(|| Error::Mode("segmentation output requested from a model without a segmentation head".into()))
    }
}

/// Ground truth for a batch.
#[derive(Clone, Debug)]
pub struct BatchTargets {
    pub detection: Vec<DetectionTargets>,
    /// Row-major 0/1 masks.
    pub masks: Vec<Vec<f64>>,
}

impl BatchTargets {
    pub fn from_samples(samples: &[Sample], config: &TargetConfig) -> Result<Self> {
        let mut detection = Vec::with_capacity(samples.len());
        let mut masks = Vec::with_capacity(samples.len());
        for s in samples {
            detection.push(encode_targets(&s.boxes, s.height(), s.width(), config)?);
            masks.push(s.mask.data().iter().map(|&v| v as f64).collect());
        }
        Ok(Self { detection, masks })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Batch losses: per-image reports averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub det: Option<DetLossReport>,
    pub seg: Option<SegLossReport>,
    pub total: TotalLossReport,
}

pub struct BatchGrads<T> {
    pub detection: Option<DetectionGrads<T>>,
    pub segmentation: Option<Tensor<T>>,
}

fn to_f64<T: Real>(values: &[T]) -> Vec<f64> {
    values.iter().map(|v| v.as_f64()).collect()
}

fn mean_det(reports: &[DetLossReport], size_weight: f64) -> DetLossReport {
    let n = reports.len() as f64;
    let heatmap = reports.iter().map(|r| r.heatmap).sum::<f64>() / n;
    let size = reports.iter().map(|r| r.size).sum::<f64>() / n;
    DetLossReport {
        heatmap,
        size,
        total: heatmap + size_weight * size,
        keypoints: reports.iter().map(|r| r.keypoints).sum(),
    }
}

fn mean_seg(reports: &[SegLossReport], config: &SegLossConfig) -> SegLossReport {
    let n = reports.len() as f64;
    let dice_target = reports.iter().map(|r| r.dice_target).sum::<f64>() / n;
    let dice_background = reports.iter().map(|r| r.dice_background).sum::<f64>() / n;
    SegLossReport {
        dice_target,
        dice_background,
        total: config.target_weight * (1.0 - dice_target) + config.background_weight * (1.0 - dice_background),
    }
}

/// Evaluates the mode's losses on a batch and the gradients of the weighted
/// total w.r.t. the head outputs. Each image contributes `1/N` of its loss.
pub fn batch_loss<T: Real>(outputs: &ModelOutputs<T>, targets: &BatchTargets, config: &LossConfig) -> Result<(BatchLoss, BatchGrads<T>)> {
    let n = targets.len();
    if n == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    let scale = 1.0 / n as f64;
    let mut det_report = None;
    let mut det_grads = None;
    if let Some(out) = &outputs.detection {
        let [bn, _, h, w] = out.heatmap.shape();
        if bn != n {
            return Err(Error::Shape(format!("{bn} predictions for {n} targets")));
        }
        let mut g_hm = Tensor::zeros(out.heatmap.shape());
        let mut g_size = Tensor::zeros(out.size.shape());
        let mut reports = Vec::with_capacity(n);
        for (i, t) in targets.detection.iter().enumerate() {
            if (t.height, t.width) != (h, w) {
                return Err(Error::Shape(format!("targets are {}×{} but outputs are {h}×{w}", t.height, t.width)));
            }
            let hm = to_f64(out.heatmap.plane(i, 0));
            let sz = to_f64(out.size.sample(i));
            let (r, gh, gs) = detection_loss(&hm, &sz, t, &config.detection)?;
            let k = config.det_weight * scale;
            for (d, g) in g_hm.plane_mut(i, 0).iter_mut().zip(gh) {
                *d = T::of(k * g);
            }
            for (d, g) in g_size.sample_mut(i).iter_mut().zip(gs) {
                *d = T::of(k * g);
            }
            reports.push(r);
        }
        det_report = Some(mean_det(&reports, config.detection.size_weight));
        det_grads = Some(DetectionGrads { heatmap: g_hm, size: g_size });
    }
    let mut seg_report = None;
    let mut seg_grad = None;
    if let Some(probs) = &outputs.segmentation {
        if probs.batch() != n {
            return Err(Error::Shape(format!("{} predictions for {n} masks", probs.batch())));
        }
        let mut g = Tensor::zeros(probs.shape());
        let mut reports = Vec::with_capacity(n);
        for (i, mask) in targets.masks.iter().enumerate() {
            let p = to_f64(probs.plane(i, 0));
            let (r, grad) = segmentation_loss(&p, mask, &config.segmentation)?;
            let k = config.seg_weight * scale;
            for (d, gv) in g.plane_mut(i, 0).iter_mut().zip(grad) {
                *d = T::of(k * gv);
            }
            reports.push(r);
        }
        seg_report = Some(mean_seg(&reports, &config.segmentation));
        seg_grad = Some(g);
    }
    let total = total_loss(det_report.as_ref(), seg_report.as_ref(), config.det_weight, config.seg_weight)?;
    Ok((
        BatchLoss { det: det_report, seg: seg_report, total },
        BatchGrads { detection: det_grads, segmentation: seg_grad },
    ))
}

pub const CONFIG_KEY: &str = "model_config";

/// Backbone with the heads selected by the task mode.
#[derive(Debug)]
pub struct MtuNet<T> {
    config: ModelConfig,
    pub backbone: Backbone<T>,
    pub detection: Option<DetectionHead<T>>,
    pub segmentation: Option<PspHead<T>>,
}

impl<T: Real> Clone for MtuNet<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            backbone: self.backbone.clone(),
            detection: self.detection.clone(),
            segmentation: self.segmentation.clone(),
        }
    }
}

impl<T: Real> MtuNet<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let backbone = Backbone::new(config.backbone.clone(), rng)?;
        let task = config.mode.task;
        let detection = task.has_detection().then(|| DetectionHead::new(config.detection.clone(), rng));
        let segmentation = task.has_segmentation().then(|| PspHead::new(rng));
        Ok(Self { config, backbone, detection, segmentation })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn task(&self) -> TaskMode {
        self.config.mode.task
    }

    fn heads_infer(&self, feature: &FeatureMap<T>) -> Result<ModelOutputs<T>> {
        Ok(ModelOutputs {
            detection: self.detection.as_ref().map(|h| h.infer(feature)).transpose()?,
            segmentation: self.segmentation.as_ref().map(|h| h.infer(feature)).transpose()?,
        })
    }

    /// Inference: running norm statistics; the backbone runs once.
    pub fn infer(&self, x: &Tensor<T>) -> Result<ModelOutputs<T>> {
        let feature = self.backbone.infer(x)?;
        self.heads_infer(&feature)
    }

    /// Training-mode forward keeping caches for [`MtuNet::backward`].
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<ModelOutputs<T>> {
        let feature = self.backbone.forward(x)?;
        Ok(ModelOutputs {
            detection: self.detection.as_mut().map(|h| h.forward(&feature)).transpose()?,
            segmentation: self.segmentation.as_mut().map(|h| h.forward(&feature)).transpose()?,
        })
    }

    /// Accumulates gradients from both heads into the shared backbone.
    pub fn backward(&mut self, grads: &BatchGrads<T>) -> Result<()> {
        let mut feature_grad: Option<Tensor<T>> = None;
        let mut add = |g: Tensor<T>| -> Result<()> {
            match &mut feature_grad {
                Some(acc) => acc.add_assign(&g)?,
                None => feature_grad = Some(g),
            }
            Ok(())
        };
        match (&mut self.detection, &grads.detection) {
            (Some(head), Some(g)) => add(head.backward(g)?)?,
            (None, None) => {}
            _ => return Err(Error::Mode("detection gradient does not match the model mode".into())),
        }
        match (&mut self.segmentation, &grads.segmentation) {
            (Some(head), Some(g)) => add(head.backward(g)?)?,
            (None, None) => {}
            _ => return Err(Error::Mode("segmentation gradient does not match the model mode".into())),
        }
        let g = feature_grad.ok_or_else(|| Error::Mode("no gradients to propagate".into()))?;
        self.backbone.backward(&g)?;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::default();
        ckpt.metadata.insert(CONFIG_KEY.to_string(), serde_json::to_string(&self.config)?);
        ckpt.capture("", self);
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
        let mut ckpt = self.to_checkpoint()?;
        ckpt.metadata.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
        ckpt.save(path)?;
        Ok(())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = checkpoint_config(ckpt)?;
        let mut model = Self::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        ckpt.restore("", &mut model)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Replaces the backbone weights with those stored in `ckpt`; heads keep
    /// their current (fresh) weights and nothing is frozen.
    pub fn load_pretrained_backbone(&mut self, ckpt: &Checkpoint, source: &str) -> Result<()> {
        let stored = checkpoint_config(ckpt)?;
        let diffs = self.config.backbone.differences(&stored.backbone);
        if !diffs.is_empty() {
            return Err(Error::BackboneMismatch(format!(
                "model vs checkpoint: {}",
                diffs.join(", ")
            )));
        }
        ckpt.restore("backbone", &mut self.backbone)?;
        self.config.mode.pretrained_from = Some(source.to_string());
        Ok(())
    }
}

pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<ModelConfig> {
    let raw = ckpt
        .metadata
        .get(CONFIG_KEY)
        .ok_or_else(|| Error::Config("checkpoint carries no model config".into()))?;
    Ok(serde_json::from_str(raw)?)
}

impl<T: Real> Module<T> for MtuNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorRef<'_, T>)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        if let Some(h) = &self.detection {
            h.visit(&join(prefix, "det_head"), f);
        }
        if let Some(h) = &self.segmentation {
            h.visit(&join(prefix, "seg_head"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorMut<'_, T>)) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        if let Some(h) = &mut self.detection {
            h.visit_mut(&join(prefix, "det_head"), f);
        }
        if let Some(h) = &mut self.segmentation {
            h.visit_mut(&join(prefix, "seg_head"), f);
        }
    }
}
