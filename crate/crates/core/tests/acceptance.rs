//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Positional arguments act as substring filters on the criterion names.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use mtnet_core::backbone::BackboneConfig;
use mtnet_core::data::{prepare_data, synth_generate, BoxAnnotation, Sample, SplitSpec, SynthConfig};
use mtnet_core::detection::{
    detection_loss, encode_targets, focal_loss, focal_loss_grad, size_loss, DetLossConfig, FocalParams, Keypoint, TargetConfig,
};
use mtnet_core::evaluation::{average_precision, box_iou, evaluate_detections, segmentation_iou, ConfusionCounts};
use mtnet_core::geometry::BBox;
use mtnet_core::model::{total_loss, ModelConfig, ModelMode, MtuNet, TaskMode};
use mtnet_core::postprocess::{assemble_boxes, extract_peaks, Detection};
use mtnet_core::segmentation::{dice_smooth, dice_smooth_grad, segmentation_loss, SegLossConfig, SegLossReport};
use mtnet_core::trainer::{evaluate, train_model, EvalTasks, StepLog, TrainConfig};
use mtnet_nn::{Module, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Random boxes that neither overlap nor touch, inside a `size×size` image.
fn random_boxes(rng: &mut ChaCha8Rng, size: usize, count: usize, max_side: usize, odd_only: bool) -> Vec<BoxAnnotation> {
    let mut out: Vec<BoxAnnotation> = Vec::new();
    let mut tries = 0;
    while out.len() < count && tries < 1000 {
        tries += 1;
        let mut side = || {
            let s = rng.random_range(1..=max_side);
            if odd_only && s % 2 == 0 { s - 1 } else { s }
        };
        let (w, h) = (side(), side());
        let x1 = rng.random_range(0..=size - w);
        let y1 = rng.random_range(0..=size - h);
        let (x2, y2) = (x1 + w - 1, y1 + h - 1);
        let apart = out.iter().all(|b| x2 + 1 < b.x1 || b.x2 + 1 < x1 || y2 + 1 < b.y1 || b.y2 + 1 < y1);
        if apart {
            out.push(BoxAnnotation {
                x1,
                y1,
                x2,
                y2,
                centroid: ((x1 + x2) as f64 / 2.0, (y1 + y2) as f64 / 2.0),
                area: w * h,
            });
        }
    }
    out
}

// ---------- criterion 1 ----------

fn oracle_focal(pred: &[f64], target: &[f64]) -> f64 {
    let n = target.iter().filter(|&&y| y == 1.0).count().max(1) as f64;
    let mut sum = 0.0;
    for (&p, &y) in pred.iter().zip(target) {
        let p = p.clamp(1e-6, 1.0 - 1e-6);
        sum += if y == 1.0 {
            -(1.0 - p) * (1.0 - p) * p.ln()
        } else {
            -(1.0 - y).powi(4) * p * p * (1.0 - p).ln()
        };
    }
    sum / n
}

fn oracle_size(size_map: &[f64], width: usize, boxes: &[BoxAnnotation]) -> f64 {
    if boxes.is_empty() {
        return 0.0;
    }
    let hw = size_map.len() / 2;
    let mut sum = 0.0;
    for b in boxes {
        let (cx, cy) = ((b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2);
        let (bw, bh) = ((b.x2 - b.x1 + 1) as f64, (b.y2 - b.y1 + 1) as f64);
        let i = cy * width + cx;
        sum += (size_map[i] - bw).abs() + (size_map[hw + i] - bh).abs();
    }
    sum / boxes.len() as f64
}

fn oracle_dice(pred: &[f64], truth: &[f64]) -> f64 {
    let inter: f64 = pred.iter().zip(truth).map(|(p, t)| p * t).sum();
    let union: f64 = pred.iter().zip(truth).map(|(p, t)| p * p + t * t).sum();
    (2.0 * inter + 1.0) / (union + 1.0)
}

fn oracle_seg(pred: &[f64], truth: &[f64]) -> f64 {
    let inv = |v: &[f64]| v.iter().map(|x| 1.0 - x).collect::<Vec<_>>();
    10.0 * (1.0 - oracle_dice(pred, truth)) + 0.1 * (1.0 - oracle_dice(&inv(pred), &inv(truth)))
}

fn criterion_1() -> Outcome {
    let fp = FocalParams::default();
    let tol = 1e-6;
    // hand-derived examples
    let mut target = vec![0.0; 16];
    target[5] = 1.0;
    let mut pred = vec![1e-6; 16];
    pred[5] = 0.5;
    let v = focal_loss(&pred, &target, 1, &fp).map_err(|e| e.to_string())?;
    ensure!(close(v, 0.25 * 2f64.ln(), tol) && close(v, 0.17329, 1e-5), "focal keypoint example gave {v}");
    let v = focal_loss(&[0.5], &[0.5], 0, &fp).map_err(|e| e.to_string())?;
    ensure!(close(v, 0.0625 * 0.25 * 2f64.ln(), tol) && close(v, 0.01083, 1e-5), "focal background example gave {v}");
    let kp = |x: usize, y: usize, w: f64, h: f64| Keypoint {
        pixel: (x, y),
        center: (x as f64, y as f64),
        size: (w, h),
        offset: (0.0, 0.0),
        sigma: 1.0,
    };
    let mut smap = vec![0.0; 2 * 16];
    smap[5] = 5.0;
    smap[16 + 5] = 5.0;
    let v = size_loss(&smap, 4, 4, &[kp(1, 1, 4.0, 6.0)]).map_err(|e| e.to_string())?;
    ensure!(close(v, 2.0, tol), "size example gave {v}");
    smap[10] = 3.0;
    smap[16 + 10] = 3.0;
    let v = size_loss(&smap, 4, 4, &[kp(1, 1, 4.0, 6.0), kp(2, 2, 5.0, 5.0)]).map_err(|e| e.to_string())?;
    ensure!(close(v, 3.0, tol), "two-target size example gave {v}");
    let (t2, p2) = ([1.0, 0.0, 0.0, 0.0], [0.5, 0.0, 0.0, 0.0]);
    let d = dice_smooth(&p2, &t2, 1.0).map_err(|e| e.to_string())?;
    ensure!(close(d, 2.0 / 2.25, tol), "dice example gave {d}");
    ensure!(dice_smooth(&[0.0; 4], &[0.0; 4], 1.0).unwrap() == 1.0, "empty dice is not 1");
    ensure!(dice_smooth(&t2, &t2, 1.0).unwrap() == 1.0, "perfect dice is not 1");
    let (r, _) = segmentation_loss(&p2, &t2, &SegLossConfig::default()).map_err(|e| e.to_string())?;
    let expected = 10.0 * (1.0 - 2.0 / 2.25) + 0.1 * (1.0 - 7.0 / 7.25);
    ensure!(close(r.total, expected, tol) && close(r.total, 1.1146, 1e-4), "seg example gave {}", r.total);
    let one = encode_targets(
        &[BoxAnnotation { x1: 0, y1: 0, x2: 2, y2: 2, centroid: (1.0, 1.0), area: 9 }],
        4,
        4,
        &TargetConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let mut hm = vec![1e-6; 16];
    let keypoint = one.keypoints[0].pixel.1 * 4 + one.keypoints[0].pixel.0;
    hm[keypoint] = 0.5;
    let hm: Vec<f64> = hm.iter().zip(&one.heatmap).map(|(&p, &y)| if y > 0.0 && y < 1.0 { 1e-6 } else { p }).collect();
    let mut sm = vec![0.0; 32];
    sm[keypoint] = 4.0;
    sm[16 + keypoint] = 4.0;
    let (rep, _, _) = detection_loss(&hm, &sm, &one, &DetLossConfig::default()).map_err(|e| e.to_string())?;
    ensure!(close(rep.total, 0.25 * 2f64.ln() + 0.1 * 2.0, 1e-5), "detection example gave {}", rep.total);
    let seg = |total| SegLossReport { dice_target: 0.0, dice_background: 0.0, total };
    let det = |total| mtnet_core::detection::DetLossReport { heatmap: 0.0, size: 0.0, total, keypoints: 1 };
    ensure!(total_loss(Some(&det(1.0)), Some(&seg(2.0)), 3.0, 1.0).unwrap().total == 5.0, "total 3·1+2");
    ensure!(total_loss(Some(&det(0.0)), Some(&seg(0.0)), 3.0, 1.0).unwrap().total == 0.0, "total zero");
    ensure!(total_loss(None, Some(&seg(0.4)), 3.0, 1.0).unwrap().total == 0.4, "seg-only total");

    // random instances against the scalar oracles
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let count = rng.random_range(0..=3);
        let boxes = random_boxes(&mut rng, 8, count, 3, false);
        let t = encode_targets(&boxes, 8, 8, &TargetConfig::default()).map_err(|e| e.to_string())?;
        let hm: Vec<f64> = (0..64).map(|_| rng.random_range(0.001..0.999)).collect();
        let sm: Vec<f64> = (0..128).map(|_| rng.random_range(0.0..6.0)).collect();
        let probs: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let mask: Vec<f64> = (0..64).map(|_| (rng.random::<f64>() < 0.3) as u8 as f64).collect();
        let (rep, _, _) = detection_loss(&hm, &sm, &t, &DetLossConfig::default()).map_err(|e| e.to_string())?;
        let (seg_rep, _) = segmentation_loss(&probs, &mask, &SegLossConfig::default()).map_err(|e| e.to_string())?;
        let focal = focal_loss(&hm, &t.heatmap, t.keypoints.len(), &fp).map_err(|e| e.to_string())?;
        let size = size_loss(&sm, 8, 8, &t.keypoints).map_err(|e| e.to_string())?;
        let dice = dice_smooth(&probs, &mask, 1.0).map_err(|e| e.to_string())?;
        let total = total_loss(Some(&rep), Some(&seg_rep), 3.0, 1.0).map_err(|e| e.to_string())?;
        let (of, os, od, og) = (oracle_focal(&hm, &t.heatmap), oracle_size(&sm, 8, &boxes), oracle_dice(&probs, &mask), oracle_seg(&probs, &mask));
        let odet = of + 0.1 * os;
        let pairs = [
            ("focal", focal, of),
            ("size", size, os),
            ("det.heatmap", rep.heatmap, of),
            ("det.size", rep.size, os),
            ("det", rep.total, odet),
            ("dice", dice, od),
            ("seg", seg_rep.total, og),
            ("total", total.total, 3.0 * odet + og),
        ];
        for (name, got, want) in pairs {
            worst = worst.max((got - want).abs());
            ensure!(close(got, want, tol), "instance {i}: {name} {got} vs oracle {want}");
        }
        ensure!(rep.total == rep.heatmap + 0.1 * rep.size, "instance {i}: L_det identity not bit-exact");
    }
    Ok(format!("worked examples and 100 random 8×8 instances, max deviation {worst:.1e}"))
}

// ---------- criterion 2 ----------

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let fp = FocalParams::default();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut check = |name: &str, analytic: &[f64], f: &dyn Fn(&[f64]) -> f64, x: &[f64]| -> Result<(), String> {
        for i in 0..x.len() {
            let mut up = x.to_vec();
            up[i] += h;
            let mut down = x.to_vec();
            down[i] -= h;
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            let err = (analytic[i] - fd).abs();
            worst = worst.max(err / fd.abs().max(1e-12));
            ensure!(err <= 1e-3 * fd.abs() + 1e-9, "{name}: pixel {i} analytic {} vs numeric {fd}", analytic[i]);
        }
        Ok(())
    };
    for _ in 0..20 {
        let count = rng.random_range(1..=3);
        let boxes = random_boxes(&mut rng, 8, count, 3, false);
        let t = encode_targets(&boxes, 8, 8, &TargetConfig::default()).map_err(|e| e.to_string())?;
        let pred: Vec<f64> = (0..64).map(|_| rng.random_range(0.05..0.95)).collect();
        let n = t.keypoints.len();
        let (_, g) = focal_loss_grad(&pred, &t.heatmap, n, &fp).map_err(|e| e.to_string())?;
        check("focal", &g, &|p| focal_loss(p, &t.heatmap, n, &fp).unwrap(), &pred)?;
        let truth: Vec<f64> = (0..64).map(|_| (rng.random::<f64>() < 0.3) as u8 as f64).collect();
        let probs: Vec<f64> = (0..64).map(|_| rng.random_range(0.05..0.95)).collect();
        let (_, g) = dice_smooth_grad(&probs, &truth, 1.0).map_err(|e| e.to_string())?;
        check("dice", &g, &|p| dice_smooth(p, &truth, 1.0).unwrap(), &probs)?;
    }
    Ok(format!("20 focal + 20 dice random 8×8 maps, worst relative error {worst:.1e}"))
}

// ---------- criterion 3 ----------

fn round_trip(boxes: &[BoxAnnotation], with_offsets: bool) -> Result<(), String> {
    let (h, w) = (64, 64);
    let t = encode_targets(boxes, h, w, &TargetConfig::default()).map_err(|e| e.to_string())?;
    let mut size = vec![0.0; 2 * h * w];
    let mut offset = vec![0.0; 2 * h * w];
    for kp in &t.keypoints {
        let i = kp.pixel.1 * w + kp.pixel.0;
        size[i] = kp.size.0;
        size[h * w + i] = kp.size.1;
        offset[i] = kp.offset.0;
        offset[h * w + i] = kp.offset.1;
    }
    let peaks = extract_peaks(&t.heatmap, 1, h, w, 100, 0.25).map_err(|e| e.to_string())?;
    let dets = assemble_boxes(&peaks, &size, with_offsets.then_some(offset.as_slice()), h, w).map_err(|e| e.to_string())?;
    ensure!(dets.boxes.len() == boxes.len(), "{} boxes decoded from {}", dets.boxes.len(), boxes.len());
    for b in boxes {
        let want = b.extent();
        let (cx, cy) = b.center();
        let (bw, bh) = b.size();
        let hit = dets.boxes.iter().any(|d| {
            let (dx, dy) = d.bbox.center();
            d.bbox == want && dx == cx && dy == cy && d.bbox.width() == bw && d.bbox.height() == bh
        });
        ensure!(hit, "box {want:?} not recovered exactly from {:?}", dets.boxes);
    }
    Ok(())
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut total = 0;
    for i in 0..200 {
        let count = rng.random_range(1..=6);
        // Odd sides put the centre on a pixel, so no offset is needed.
        let odd = random_boxes(&mut rng, 64, count, 11, true);
        round_trip(&odd, false).map_err(|e| format!("set {i} (odd sides): {e}"))?;
        let any = random_boxes(&mut rng, 64, count, 11, false);
        round_trip(&any, true).map_err(|e| format!("set {i} (any sides, offsets): {e}"))?;
        total += odd.len() + any.len();
    }
    Ok(format!("200 odd-sided sets without offsets and 200 arbitrary sets with offsets, {total} boxes, all exact"))
}

// ---------- criterion 4 ----------

/// Greedy matching per image, then interpolated precision read off the
/// full ranked list at every recall level.
fn oracle_ap(dets: &[Vec<Detection>], gts: &[Vec<BBox>], threshold: f64) -> Option<f64> {
    let total_gt: usize = gts.iter().map(Vec::len).sum();
    if total_gt == 0 {
        return None;
    }
    let mut ranked: Vec<(f64, bool)> = Vec::new();
    for (d, g) in dets.iter().zip(gts) {
        let mut d = d.clone();
        d.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        let mut used = vec![false; g.len()];
        for det in &d {
            let mut best: Option<(usize, f64)> = None;
            for (j, gt) in g.iter().enumerate() {
                let iou = box_iou(&det.bbox, gt);
                if !used[j] && iou >= threshold && best.is_none_or(|(_, b)| iou >= b) {
                    best = Some((j, iou));
                }
            }
            if let Some((j, _)) = best {
                used[j] = true;
            }
            ranked.push((det.score, best.is_some()));
        }
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut points = Vec::new();
    let mut tp = 0;
    for (k, &(_, hit)) in ranked.iter().enumerate() {
        tp += hit as usize;
        points.push((tp as f64 / total_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut sum = 0.0;
    for level in 0..=100 {
        let r = level as f64 / 100.0;
        sum += points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
    }
    Some(sum / 101.0)
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let x = rng.random_range(0.0..20.0);
    let y = rng.random_range(0.0..20.0);
    BBox::new(x, y, x + rng.random_range(1.0..8.0), y + rng.random_range(1.0..8.0))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut checked = 0;
    for i in 0..500 {
        let images = rng.random_range(1..=3);
        let mut gts = Vec::new();
        let mut dets = Vec::new();
        for _ in 0..images {
            let g: Vec<BBox> = (0..rng.random_range(0..=5)).map(|_| random_box(&mut rng)).collect();
            let mut d = Vec::new();
            for gt in &g {
                if rng.random::<f64>() < 0.8 {
                    let j = |r: &mut ChaCha8Rng| r.random_range(-1.5..1.5);
                    let b = BBox::new(gt.x1 + j(&mut rng), gt.y1 + j(&mut rng), gt.x2 + j(&mut rng), gt.y2 + j(&mut rng));
                    if b.x2 > b.x1 && b.y2 > b.y1 {
                        d.push(b);
                    }
                }
            }
            for _ in 0..rng.random_range(0..=3) {
                d.push(random_box(&mut rng));
            }
            dets.push(d.into_iter().map(|bbox| Detection { bbox, score: rng.random::<f64>(), class: 0 }).collect::<Vec<_>>());
            gts.push(g);
        }
        for k in 0..10 {
            let t = (50 + 5 * k) as f64 / 100.0;
            let got = average_precision(&dets, &gts, t).map_err(|e| e.to_string())?;
            match oracle_ap(&dets, &gts, t) {
                None => ensure!(!got.defined, "instance {i}: AP defined without ground truth"),
                Some(want) => ensure!(got.defined && close(got.ap, want, 1e-6), "instance {i} @{t}: {} vs oracle {want}", got.ap),
            }
            checked += 1;
        }
        // segmentation IoU against direct counting
        let n = rng.random_range(1..80);
        let p: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let g: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let count = |a: u8, b: u8| p.iter().zip(&g).filter(|&(&x, &y)| x == a && y == b).count() as f64;
        let (tp, fpos, fneg, tn) = (count(1, 1), count(1, 0), count(0, 1), count(0, 0));
        let ratio = |num: f64, den: f64| if den == 0.0 { 1.0 } else { num / den };
        let want_t = ratio(tp, tp + fpos + fneg);
        let want_b = ratio(tn, tn + fpos + fneg);
        let got = segmentation_iou(&p, &g).map_err(|e| e.to_string())?;
        ensure!(got == (want_t, want_b, (want_t + want_b) / 2.0), "instance {i}: IoU {got:?}");
        let mut acc = ConfusionCounts::default();
        acc.add(&p, &g).map_err(|e| e.to_string())?;
        ensure!(acc.true_positive as f64 == tp && acc.true_negative as f64 == tn, "instance {i}: counts");
    }
    let gt = vec![vec![BBox::new(0.0, 0.0, 10.0, 10.0)]];
    let d = vec![vec![Detection { bbox: BBox::new(0.0, 0.0, 10.0, 6.0), score: 0.9, class: 0 }]];
    let m = evaluate_detections(&d, &gt).map_err(|e| e.to_string())?;
    ensure!(m.ap50 == 1.0 && m.ap75 == 0.0, "IoU 0.6 anchor gave AP50 {} AP75 {}", m.ap50, m.ap75);
    Ok(format!("{checked} AP evaluations on 500 instances match the oracle; IoU exact; anchor AP50=1 AP75=0"))
}

// ---------- criterion 5 ----------

fn overfit_config(task: TaskMode) -> TrainConfig {
    TrainConfig {
        augment: false,
        input_size: 0,
        val_every: 1000,
        model: ModelConfig {
            backbone: BackboneConfig { depth: 3, base_width: 16, ..BackboneConfig::default() },
            mode: ModelMode { task, pretrained_from: None },
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn criterion_5() -> Outcome {
    let cfg = SynthConfig { count: 8, height: 32, width: 32, ..SynthConfig::default() };
    let samples = synth_generate(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).map_err(|e| e.to_string())?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let mut parts = Vec::new();
    for task in [TaskMode::DetOnly, TaskMode::Multitask, TaskMode::SegOnly] {
        let tc = overfit_config(task);
        let mut model = MtuNet::<f32>::new(tc.model.clone(), &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| e.to_string())?;
        let rec = train_model(&mut model, &tc, &refs, &[], None).map_err(|e| e.to_string())?;
        let ev = evaluate(&model, &refs, 0, &tc.postprocess, "train", EvalTasks::of(task)).map_err(|e| e.to_string())?;
        if let Some(d) = &ev.report.detection {
            ensure!(d.ap50 == 1.0, "{}: train AP50 {:.2} after {} epochs", task.name(), d.ap50 * 100.0, tc.epochs);
            parts.push(format!("{} AP50 {:.0}", task.name(), d.ap50 * 100.0));
        }
        if task == TaskMode::SegOnly {
            let s = ev.report.segmentation.as_ref().expect("seg metrics");
            let last = rec.epochs.last().map_or(f64::NAN, |e| e.train.total);
            ensure!(s.target_iou > 0.9, "seg_only: train target IoU {:.3}", s.target_iou);
            parts.push(format!("seg_only target IoU {:.3} (final L_seg {last:.4})", s.target_iou));
        }
    }
    Ok(format!("8 synthetic 32×32 images, width 16, 200 epochs: {}", parts.join(", ")))
}

// ---------- criterion 6 ----------

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let full = MtuNet::<f32>::new(ModelConfig::default(), &mut rng).map_err(|e| e.to_string())?.parameter_count();
    let seg_cfg = ModelConfig { mode: ModelMode { task: TaskMode::SegOnly, pretrained_from: None }, ..ModelConfig::default() };
    let seg = MtuNet::<f32>::new(seg_cfg, &mut rng).map_err(|e| e.to_string())?.parameter_count();
    let (rf, rs) = (full as f64 / 29.06e6, seg as f64 / 29.05e6);
    ensure!((rf - 1.0).abs() <= 0.05, "full model {full} is {:.1}% off", (rf - 1.0) * 100.0);
    ensure!((rs - 1.0).abs() <= 0.05, "seg-only model {seg} is {:.1}% off", (rs - 1.0) * 100.0);
    Ok(format!("full {full} ({:+.2}%), seg-only {seg} ({:+.2}%)", (rf - 1.0) * 100.0, (rs - 1.0) * 100.0))
}

// ---------- criterion 7 ----------

fn criterion_7() -> Outcome {
    let cfg = SynthConfig { count: 10, height: 32, width: 32, ..SynthConfig::default() };
    let samples = synth_generate(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).map_err(|e| e.to_string())?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let tc = TrainConfig {
        epochs: 5,
        input_size: 32,
        model: ModelConfig { backbone: BackboneConfig { depth: 2, base_width: 8, ..BackboneConfig::default() }, ..ModelConfig::default() },
        ..TrainConfig::default()
    };
    let mut model = MtuNet::<f32>::new(tc.model.clone(), &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rec = train_model(&mut model, &tc, &refs, &[], Some(dir.path())).map_err(|e| e.to_string())?;
    for s in &rec.steps {
        let (det, seg) = (s.det.ok_or("missing L_det")?, s.seg.ok_or("missing L_seg")?);
        ensure!(s.total.to_bits() == (3.0 * det + seg).to_bits(), "in-memory step {}: identity broken", s.step);
    }
    let log = fs::read_to_string(dir.path().join("log.jsonl")).map_err(|e| e.to_string())?;
    let mut steps = 0;
    for (i, line) in log.lines().enumerate() {
        let s: StepLog = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let (det, seg) = (s.det.ok_or("missing L_det")?, s.seg.ok_or("missing L_seg")?);
        ensure!(s.total.to_bits() == (3.0 * det + seg).to_bits(), "step {i}: {} != 3·{det} + {seg}", s.total);
        steps += 1;
    }
    ensure!(steps == 5 * 3, "expected 15 logged steps, found {steps}");
    Ok(format!("{steps} logged multitask steps satisfy L_all = 3·L_det + L_seg bit-exactly"))
}

// ---------- criterion 8 ----------

fn criterion_8() -> Outcome {
    const RUNS: usize = 200;
    const WARMUP: usize = 5;
    const WIDTH: usize = 32;
    let mut models = Vec::new();
    for task in [TaskMode::Multitask, TaskMode::SegOnly, TaskMode::DetOnly] {
        let cfg = ModelConfig {
            backbone: BackboneConfig { base_width: WIDTH, ..BackboneConfig::default() },
            mode: ModelMode { task, pretrained_from: None },
            ..ModelConfig::default()
        };
        models.push(MtuNet::<f32>::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| e.to_string())?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::from_fn([1, 1, 320, 320], |_| rng.random::<f32>());
    let mut totals = [0.0f64; 3];
    for round in 0..WARMUP + RUNS {
        // Interleaved so slow drifts hit all three models alike.
        for (m, total) in models.iter().zip(&mut totals) {
            let t = Instant::now();
            m.infer(&x).map_err(|e| e.to_string())?;
            if round >= WARMUP {
                *total += t.elapsed().as_secs_f64();
            }
        }
    }
    let [multi, seg, det] = totals.map(|t| t / RUNS as f64 * 1000.0);
    let ratio = multi / (seg + det);
    ensure!(ratio < 0.75, "ratio {ratio:.3} (multitask {multi:.1} ms, seg {seg:.1} ms, det {det:.1} ms)");
    Ok(format!(
        "320×320, width {WIDTH}, {RUNS} runs: multitask {multi:.1} ms, seg-only {seg:.1} ms, det-only {det:.1} ms, ratio {ratio:.3}"
    ))
}

// ---------- criterion 9 ----------

/// Full-recipe runs on SIRST; `None` when the dataset is not available.
fn criterion_9() -> Option<Outcome> {
    let root = PathBuf::from(std::env::var_os("MTNET_SIRST_ROOT")?);
    Some((|| {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let prepared = tmp.path().join("sirst");
        prepare_data(&root, &prepared, &SplitSpec::default()).map_err(|e| e.to_string())?;
        let ds = mtnet_core::data::load_dataset(&prepared).map_err(|e| e.to_string())?;
        let (train, val) = (ds.train().map_err(|e| e.to_string())?, ds.val().map_err(|e| e.to_string())?);
        let mut results = BTreeMap::new();
        for task in [TaskMode::SegOnly, TaskMode::DetOnly, TaskMode::Multitask] {
            let tc = TrainConfig {
                model: ModelConfig { mode: ModelMode { task, pretrained_from: None }, ..ModelConfig::default() },
                ..TrainConfig::default()
            };
            let mut model = MtuNet::<f32>::new(tc.model.clone(), &mut ChaCha8Rng::seed_from_u64(tc.seed)).map_err(|e| e.to_string())?;
            train_model(&mut model, &tc, &train, &val, None).map_err(|e| e.to_string())?;
            let ev = evaluate(&model, &val, tc.input_size, &tc.postprocess, "val", EvalTasks::of(task)).map_err(|e| e.to_string())?;
            results.insert(task.name(), ev.report);
        }
        let iou = results["seg_only"].segmentation.as_ref().map_or(0.0, |s| s.target_iou) * 100.0;
        let det50 = results["det_only"].detection.as_ref().map_or(0.0, |d| d.ap50) * 100.0;
        let multi50 = results["multitask"].detection.as_ref().map_or(0.0, |d| d.ap50) * 100.0;
        let summary = format!("target IoU {iou:.2}, det AP50 {det50:.2}, multitask AP50 {multi50:.2}");
        ensure!(close(iou, 78.94, 4.0) && close(det50, 95.60, 4.0) && close(multi50, 97.50, 4.0), "{summary}");
        Ok(summary)
    })())
}

fn run(name: &str, f: fn() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("{name}: PASS  {detail}  [{secs:.1}s]");
            true
        }
        Err(detail) => {
            println!("{name}: FAIL  {detail}  [{secs:.1}s]");
            false
        }
    }
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("criterion_1_loss_oracles", criterion_1),
        ("criterion_2_gradient_checks", criterion_2),
        ("criterion_3_encode_decode_round_trip", criterion_3),
        ("criterion_4_metric_oracles", criterion_4),
        ("criterion_5_overfit_capacity", criterion_5),
        ("criterion_6_parameter_budget", criterion_6),
        ("criterion_7_multitask_identity", criterion_7),
        ("criterion_8_relative_speed", criterion_8),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        if selected(name) && !run(name, f) {
            failed += 1;
        }
    }
    let name = "criterion_9_sirst_reproduction";
    if selected(name) {
        match criterion_9() {
            None => println!("{name}: SKIP  set MTNET_SIRST_ROOT to a SIRST directory (images/, masks/) to run"),
            // Optional: reported but never fails the run.
            Some(Ok(d)) => println!("{name}: PASS  {d}"),
            Some(Err(d)) => println!("{name}: FAIL  {d} (optional criterion)"),
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
