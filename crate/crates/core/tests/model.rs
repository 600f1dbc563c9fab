use std::collections::BTreeMap;

use mtnet_core::backbone::{BackboneConfig, Upsampling};
use mtnet_core::data::{synth_generate, Sample, SynthConfig};
use mtnet_core::detection::{detection_loss, DetLossReport};
use mtnet_core::model::{batch_loss, total_loss, BatchTargets, LossConfig, ModelConfig, ModelMode, MtuNet, TaskMode};
use mtnet_core::segmentation::{segmentation_loss, SegLossReport};
use mtnet_core::Error;
use mtnet_nn::{Checkpoint, Module, Sgd, SgdConfig, Tensor, TensorRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_config(task: TaskMode) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig { in_channels: 1, depth: 1, base_width: 4, upsampling: Upsampling::Interp },
        mode: ModelMode { task, pretrained_from: None },
        ..Default::default()
    }
}

fn samples(n: usize, size: usize) -> Vec<Sample> {
    let cfg = SynthConfig { count: n, height: size, width: size, sigma: (0.8, 1.2), ..Default::default() };
    synth_generate(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
}

fn batch(samples: &[Sample]) -> Tensor<f64> {
    Tensor::stack(&samples.iter().map(|s| s.image.to_tensor::<f64>()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn mode_gating() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::<f32>::zeros([1, 1, 8, 8]);
    let m = MtuNet::<f32>::new(toy_config(TaskMode::Multitask), &mut rng).unwrap();
    let out = m.infer(&x).unwrap();
    assert!(out.detection().is_ok() && out.segmentation().is_ok());

    let m = MtuNet::<f32>::new(toy_config(TaskMode::SegOnly), &mut rng).unwrap();
    let out = m.infer(&x).unwrap();
    assert!(matches!(out.detection(), Err(Error::Mode(_))));
    assert!(out.segmentation().is_ok());

    let m = MtuNet::<f32>::new(toy_config(TaskMode::DetOnly), &mut rng).unwrap();
    let out = m.infer(&x).unwrap();
    assert!(matches!(out.segmentation(), Err(Error::Mode(_))));
}

#[test]
fn backbone_runs_once_per_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut m = MtuNet::<f32>::new(toy_config(TaskMode::Multitask), &mut rng).unwrap();
    m.infer(&Tensor::zeros([1, 1, 8, 8])).unwrap();
    assert_eq!(m.backbone.call_count(), 1);
    m.backbone.reset_call_count();
    m.forward(&Tensor::from_fn([2, 1, 8, 8], |[n, _, y, x]| (n + y * x) as f32 * 0.1)).unwrap();
    assert_eq!(m.backbone.call_count(), 1);
}

#[test]
fn total_loss_examples() {
    let det = DetLossReport { heatmap: 0.9, size: 1.0, total: 1.0, keypoints: 1 };
    let seg = SegLossReport { dice_target: 0.9, dice_background: 0.9, total: 2.0 };
    assert_eq!(total_loss(Some(&det), Some(&seg), 3.0, 1.0).unwrap().total, 5.0);
    let zero_d = DetLossReport::default();
    let zero_s = SegLossReport::default();
    assert_eq!(total_loss(Some(&zero_d), Some(&zero_s), 3.0, 1.0).unwrap().total, 0.0);
    let seg = SegLossReport { total: 0.4, ..zero_s };
    assert_eq!(total_loss(None, Some(&seg), 3.0, 1.0).unwrap().total, 0.4);
    assert!(matches!(total_loss(None, None, 3.0, 1.0), Err(Error::Mode(_))));
}

fn grads_of(m: &MtuNet<f64>) -> BTreeMap<String, Vec<f64>> {
    let mut out = BTreeMap::new();
    m.backbone.visit("", &mut |name, t| {
        if let TensorRef::Param(p) = t {
            out.insert(name.to_string(), p.grad.data().to_vec());
        }
    });
    out
}

#[test]
fn shared_backbone_gradient_is_weighted_sum() {
    let data = samples(2, 16);
    let x = batch(&data);
    let loss_cfg = LossConfig::default();
    let targets = BatchTargets::from_samples(&data, &loss_cfg.targets).unwrap();
    let base = MtuNet::<f64>::new(toy_config(TaskMode::Multitask), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();

    let run = |det_weight: f64, seg_weight: f64| {
        let mut m = base.clone();
        let cfg = LossConfig { det_weight, seg_weight, ..loss_cfg.clone() };
        let out = m.forward(&x).unwrap();
        let (_, grads) = batch_loss(&out, &targets, &cfg).unwrap();
        m.backward(&grads).unwrap();
        grads_of(&m)
    };
    let combined = run(3.0, 1.0);
    let det = run(1.0, 0.0);
    let seg = run(0.0, 1.0);
    let mut checked = 0;
    for (name, c) in &combined {
        for i in 0..c.len() {
            let (d, s) = (det[name][i], seg[name][i]);
            if d != 0.0 && s != 0.0 {
                let expected = 3.0 * d + s;
                assert!((c[i] - expected).abs() <= 1e-4 * expected.abs().max(1e-12), "{name}[{i}]");
                checked += 1;
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn single_task_losses_match_module_losses() {
    let data = samples(2, 16);
    let x = batch(&data);
    let cfg = LossConfig::default();
    let targets = BatchTargets::from_samples(&data, &cfg.targets).unwrap();

    let m = MtuNet::<f64>::new(toy_config(TaskMode::DetOnly), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let out = m.infer(&x).unwrap();
    let (loss, _) = batch_loss(&out, &targets, &cfg).unwrap();
    let det = out.detection().unwrap();
    let per: Vec<_> = (0..2)
        .map(|i| detection_loss(det.heatmap.plane(i, 0), det.size.sample(i), &targets.detection[i], &cfg.detection).unwrap().0)
        .collect();
    let report = loss.det.unwrap();
    assert_eq!(report.heatmap, (per[0].heatmap + per[1].heatmap) / 2.0);
    assert_eq!(report.size, (per[0].size + per[1].size) / 2.0);
    assert_eq!(report.total, report.heatmap + 0.1 * report.size);
    assert_eq!(loss.total.total, 3.0 * report.total);
    assert!(loss.seg.is_none());

    let m = MtuNet::<f64>::new(toy_config(TaskMode::SegOnly), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let out = m.infer(&x).unwrap();
    let (loss, _) = batch_loss(&out, &targets, &cfg).unwrap();
    let probs = out.segmentation().unwrap();
    let single = segmentation_loss(probs.plane(0, 0), &targets.masks[0], &cfg.segmentation).unwrap().0;
    let single_batch = batch_loss(
        &mtnet_core::model::ModelOutputs { detection: None, segmentation: Some(probs.select(0)) },
        &BatchTargets { detection: vec![targets.detection[0].clone()], masks: vec![targets.masks[0].clone()] },
        &cfg,
    )
    .unwrap()
    .0;
    assert_eq!(single_batch.seg.unwrap().dice_target, single.dice_target);
    assert_eq!(single_batch.seg.unwrap().total, single.total);
    assert_eq!(loss.total.total, loss.seg.unwrap().total);
}

#[test]
fn checkpoint_round_trip_and_pretrained_backbone() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let det = MtuNet::<f32>::new(toy_config(TaskMode::DetOnly), &mut rng).unwrap();
    let path = dir.path().join("det.ckpt");
    det.save(&path, &BTreeMap::new()).unwrap();
    let loaded = MtuNet::<f32>::load(&path).unwrap();
    assert_eq!(loaded.to_checkpoint().unwrap().tensors, det.to_checkpoint().unwrap().tensors);

    // det-pretrained backbone into a seg-only model
    let ckpt = Checkpoint::load(&path).unwrap();
    let mut seg = MtuNet::<f32>::new(toy_config(TaskMode::SegOnly), &mut rng).unwrap();
    seg.load_pretrained_backbone(&ckpt, "det.ckpt").unwrap();
    let saved = seg.to_checkpoint().unwrap();
    for (name, rec) in &ckpt.tensors {
        if name.starts_with("backbone.") {
            assert_eq!(&saved.tensors[name], rec, "{name}");
        }
    }
    assert_eq!(seg.config().mode.pretrained_from.as_deref(), Some("det.ckpt"));
    // and it trains
    let data = samples(2, 16);
    let x = Tensor::stack(&data.iter().map(|s| s.image.to_tensor::<f32>()).collect::<Vec<_>>()).unwrap();
    let cfg = LossConfig::default();
    let targets = BatchTargets::from_samples(&data, &cfg.targets).unwrap();
    let out = seg.forward(&x).unwrap();
    let (_, grads) = batch_loss(&out, &targets, &cfg).unwrap();
    seg.backward(&grads).unwrap();
    Sgd::new(SgdConfig { lr: 1e-3, momentum: 0.9, weight_decay: 0.05 }).step(&mut seg);

    // mismatched depth names both depths
    let mut deep_cfg = toy_config(TaskMode::SegOnly);
    deep_cfg.backbone.depth = 2;
    let mut deep = MtuNet::<f32>::new(deep_cfg, &mut rng).unwrap();
    let err = deep.load_pretrained_backbone(&ckpt, "det.ckpt").unwrap_err();
    assert!(matches!(err, Error::BackboneMismatch(_)));
    assert!(err.to_string().contains("depth 2 vs 1"), "{err}");
}

#[test]
fn parameter_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let full = MtuNet::<f32>::new(ModelConfig::default(), &mut rng).unwrap();
    let n = full.parameter_count() as f64;
    assert!((n / 29.06e6 - 1.0).abs() < 0.05, "{n}");
    let seg_cfg = ModelConfig { mode: ModelMode { task: TaskMode::SegOnly, pretrained_from: None }, ..Default::default() };
    let seg = MtuNet::<f32>::new(seg_cfg, &mut rng).unwrap();
    let n = seg.parameter_count() as f64;
    assert!((n / 29.05e6 - 1.0).abs() < 0.05, "{n}");
}
