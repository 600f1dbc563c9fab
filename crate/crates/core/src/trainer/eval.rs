use std::fs;
use std::path::Path;

use mtnet_nn::Tensor;
use serde::Serialize;

use crate::data::{resize_image_bilinear, save_mask, write_results, CocoResult, Dataset, ImageTensor, Mask, Sample};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_detections, matched_counts, segmentation_iou, ConfusionCounts, ImageDiagnostics, MetricsReport};
use crate::geometry::BBox;
use crate::model::{MtuNet, TaskMode};
use crate::postprocess::{decode, to_coco_results, DetectionResult, PostprocessConfig};

/// Which task metrics to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalTasks {
    pub detection: bool,
    pub segmentation: bool,
}

impl EvalTasks {
    /// Every task the mode has a head for.
    pub fn of(mode: TaskMode) -> Self {
        Self { detection: mode.has_detection(), segmentation: mode.has_segmentation() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImagePrediction {
    pub id: String,
    /// Boxes in the original image frame.
    pub detections: Option<DetectionResult>,
    /// Binarized mask at the original resolution.
    #[serde(skip)]
    pub mask: Option<Mask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<ImagePrediction>,
}

/// Network input for one image: resized to `input_size` (0 keeps the size)
/// with the channel count the model expects.
pub fn prepare_input(image: &ImageTensor, input_size: usize, channels: usize) -> Result<Tensor<f32>> {
    let resized = if input_size > 0 && (image.height(), image.width()) != (input_size, input_size) {
        resize_image_bilinear(image, input_size, input_size)?
    } else {
        image.clone()
    };
    Ok(resized.with_channels(channels)?.to_tensor())
}

/// Maps a box from an `in_w×in_h` frame to an `out_w×out_h` frame.
fn rescale_box(b: &BBox, in_w: usize, in_h: usize, out_w: usize, out_h: usize) -> BBox {
    let sx = out_w as f64 / in_w as f64;
    let sy = out_h as f64 / in_h as f64;
    BBox::new(
        (b.x1 + 0.5) * sx - 0.5,
        (b.y1 + 0.5) * sy - 0.5,
        (b.x2 + 0.5) * sx - 0.5,
        (b.y2 + 0.5) * sy - 0.5,
    )
    .clip(-0.5, -0.5, out_w as f64 - 0.5, out_h as f64 - 0.5)
}

/// Inference, decoding and metrics over `samples`; no augmentation.
pub fn evaluate(
    model: &MtuNet<f32>,
    samples: &[&Sample],
    input_size: usize,
    post: &PostprocessConfig,
    split: &str,
    tasks: EvalTasks,
) -> Result<Evaluation> {
    let mode = model.task();
    if tasks.detection && !mode.has_detection() {
        return Err(Error::Mode(format!("detection metrics requested from a {} model", mode.name())));
    }
    if tasks.segmentation && !mode.has_segmentation() {
        return Err(Error::Mode(format!("segmentation metrics requested from a {} model", mode.name())));
    }
    if !tasks.detection && !tasks.segmentation {
        return Err(Error::Mode("no metrics requested".into()));
    }
    let channels = model.config().backbone.in_channels;
    let mut predictions = Vec::with_capacity(samples.len());
    let mut all_dets = Vec::new();
    let mut all_gt = Vec::new();
    let mut counts = ConfusionCounts::default();
    let mut per_image = Vec::with_capacity(samples.len());
    for s in samples {
        let input = prepare_input(&s.image, input_size, channels)?;
        let (in_h, in_w) = (input.height(), input.width());
        let outputs = model.infer(&input)?;
        let mut diag = ImageDiagnostics {
            id: s.id.clone(),
            ground_truth: s.boxes.len(),
            detections: None,
            matched50: None,
            target_iou: None,
        };
        let detections = if tasks.detection {
            let mut result = decode(outputs.detection()?, 0, post)?;
            for d in &mut result.boxes {
                d.bbox = rescale_box(&d.bbox, in_w, in_h, s.width(), s.height());
            }
            let gt: Vec<BBox> = s.boxes.iter().map(|b| b.extent()).collect();
            diag.detections = Some(result.boxes.len());
            diag.matched50 = matched_counts(&[result.boxes.clone()], &[gt.clone()], 0.5).first().copied();
            all_dets.push(result.boxes.clone());
            all_gt.push(gt);
            Some(result)
        } else {
            None
        };
        let mask = if tasks.segmentation {
            let probs = outputs.segmentation()?;
            let plane = ImageTensor::new(1, in_h, in_w, probs.plane(0, 0).to_vec())?;
            let plane = if (in_h, in_w) != (s.height(), s.width()) {
                resize_image_bilinear(&plane, s.height(), s.width())?
            } else {
                plane
            };
            let bits: Vec<u8> = plane.data().iter().map(|&p| (p as f64 >= post.mask_threshold) as u8).collect();
            counts.add(&bits, s.mask.data())?;
            diag.target_iou = Some(segmentation_iou(&bits, s.mask.data())?.0);
            Some(Mask::from_values(s.height(), s.width(), bits)?)
        } else {
            None
        };
        per_image.push(diag);
        predictions.push(ImagePrediction { id: s.id.clone(), detections, mask });
    }
    let report = MetricsReport {
        split: split.to_string(),
        images: samples.len(),
        detection: tasks.detection.then(|| evaluate_detections(&all_dets, &all_gt)).transpose()?,
        segmentation: tasks.segmentation.then(|| counts.into()),
        per_image,
    };
    Ok(Evaluation { report, predictions })
}

/// Loads a checkpoint and evaluates it on a named split (`train`, `val` or `all`).
///
/// `tasks` defaults to every head the checkpoint has.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    dataset: &Dataset,
    split: &str,
    input_size: usize,
    post: &PostprocessConfig,
    tasks: Option<EvalTasks>,
) -> Result<Evaluation> {
    let model = MtuNet::<f32>::load(checkpoint)?;
    let samples = match split {
        "train" => dataset.train()?,
        "val" => dataset.val()?,
        "all" => dataset.samples.iter().collect(),
        other => return Err(Error::Config(format!("unknown split {other:?} (expected train, val or all)"))),
    };
    if samples.is_empty() {
        return Err(Error::Dataset(format!("split {split:?} is empty")));
    }
    let tasks = tasks.unwrap_or_else(|| EvalTasks::of(model.task()));
    evaluate(&model, &samples, input_size, post, split, tasks)
}

/// Writes `metrics.json`, `detections.json` (COCO results) and `masks/<id>.png`
/// under `dir`. `image_id` maps sample ids to COCO image ids.
pub fn write_predictions(dir: &Path, eval: &Evaluation, image_id: &dyn Fn(&str) -> Option<u64>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let metrics = dir.join("metrics.json");
    fs::write(&metrics, serde_json::to_string_pretty(&eval.report.to_json())?).map_err(|e| Error::io(&metrics, e))?;
    if eval.report.detection.is_some() {
        let mut results: Vec<CocoResult> = Vec::new();
        for p in &eval.predictions {
            let id = image_id(&p.id).ok_or_else(|| Error::Dataset(format!("no image id for {:?}", p.id)))?;
            if let Some(d) = &p.detections {
                results.extend(to_coco_results(d, id));
            }
        }
        write_results(&results, &dir.join("detections.json"))?;
    }
    if eval.report.segmentation.is_some() {
        let masks = dir.join("masks");
        fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
        for p in &eval.predictions {
            if let Some(m) = &p.mask {
                save_mask(&masks.join(format!("{}.png", p.id)), m)?;
            }
        }
    }
    Ok(())
}
