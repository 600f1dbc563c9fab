use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Map, Value};

use super::detection::DetectionMetrics;
use super::segmentation::ConfusionCounts;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentationMetrics {
    pub target_iou: f64,
    pub background_iou: f64,
    pub miou: f64,
    pub counts: ConfusionCounts,
}

impl From<ConfusionCounts> for SegmentationMetrics {
    fn from(counts: ConfusionCounts) -> Self {
        Self { target_iou: counts.target_iou(), background_iou: counts.background_iou(), miou: counts.miou(), counts }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageDiagnostics {
    pub id: String,
    pub ground_truth: usize,
    pub detections: Option<usize>,
    /// Detections matched at IoU 0.5 (greedy, best score first).
    pub matched50: Option<usize>,
    pub target_iou: Option<f64>,
}

/// Metrics for one split; fractions in `[0, 1]`, exported as percentages.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub split: String,
    pub images: usize,
    pub detection: Option<DetectionMetrics>,
    pub segmentation: Option<SegmentationMetrics>,
    pub per_image: Vec<ImageDiagnostics>,
}

fn pct(v: f64) -> f64 {
    v * 100.0
}

impl MetricsReport {
    /// `{AP, AP50, AP75, target_iou, background_iou, miou}` as percentages,
    /// with only the keys of the evaluated tasks, plus diagnostics.
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("split".into(), json!(self.split));
        m.insert("images".into(), json!(self.images));
        if let Some(d) = &self.detection {
            m.insert("AP".into(), json!(pct(d.ap)));
            m.insert("AP50".into(), json!(pct(d.ap50)));
            m.insert("AP75".into(), json!(pct(d.ap75)));
            m.insert("ap_defined".into(), json!(d.defined));
            let per: Map<String, Value> = d.per_threshold.iter().map(|(t, ap)| (format!("{t:.2}"), json!(pct(*ap)))).collect();
            m.insert("ap_per_threshold".into(), Value::Object(per));
        }
        if let Some(s) = &self.segmentation {
            m.insert("target_iou".into(), json!(pct(s.target_iou)));
            m.insert("background_iou".into(), json!(pct(s.background_iou)));
            m.insert("miou".into(), json!(pct(s.miou)));
        }
        m.insert("per_image".into(), serde_json::to_value(&self.per_image).unwrap_or(Value::Null));
        Value::Object(m)
    }

    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "split: {} ({} images)", self.split, self.images);
        let _ = writeln!(out, "{:<16}{:>8}", "metric", "value");
        if let Some(d) = &self.detection {
            for (k, v) in [("AP", d.ap), ("AP50", d.ap50), ("AP75", d.ap75)] {
                let _ = writeln!(out, "{k:<16}{:>8.2}", pct(v));
            }
            if !d.defined {
                let _ = writeln!(out, "(no ground-truth boxes: AP undefined, shown as 0)");
            }
        }
        if let Some(s) = &self.segmentation {
            for (k, v) in [("target_iou", s.target_iou), ("background_iou", s.background_iou), ("miou", s.miou)] {
                let _ = writeln!(out, "{k:<16}{:>8.2}", pct(v));
            }
        }
        out
    }
}
