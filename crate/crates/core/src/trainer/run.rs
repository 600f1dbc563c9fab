use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mtnet_nn::{Checkpoint, Module, Sgd, SgdConfig, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::eval::{evaluate, prepare_input, EvalTasks};
use crate::data::{augment, resize_sample, Dataset, Sample};
use crate::error::{Error, Result};
use crate::model::{batch_loss, BatchLoss, BatchTargets, MtuNet};

/// Checkpoint metadata key holding the training config as JSON.
pub const TRAIN_CONFIG_KEY: &str = "train_config";

/// Written to the run directory when a non-finite loss stops training.
pub const DIVERGED_FILE: &str = "diverged_batch.json";

/// Losses of one optimizer step (batch means); absent terms are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub batch: Vec<String>,
    pub heatmap: Option<f64>,
    pub size: Option<f64>,
    pub det: Option<f64>,
    pub seg: Option<f64>,
    pub total: f64,
}

impl StepLog {
    fn new(epoch: usize, step: usize, lr: f64, batch: Vec<String>, loss: &BatchLoss) -> Self {
        Self {
            epoch,
            step,
            lr,
            batch,
            heatmap: loss.det.map(|d| d.heatmap),
            size: loss.det.map(|d| d.size),
            det: loss.det.map(|d| d.total),
            seg: loss.seg.map(|s| s.total),
            total: loss.total.total,
        }
    }
}

/// Enough to replay the batch that produced a non-finite loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergedBatch {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch: Vec<String>,
    /// Loss terms as text, since JSON has no NaN.
    pub losses: String,
}

/// Epoch means of the logged losses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub heatmap: Option<f64>,
    pub size: Option<f64>,
    pub det: Option<f64>,
    pub seg: Option<f64>,
    pub total: f64,
}

impl LossSummary {
    fn mean(steps: &[StepLog]) -> Self {
        let n = steps.len() as f64;
        let avg = |f: &dyn Fn(&StepLog) -> Option<f64>| -> Option<f64> {
            steps.iter().map(f).sum::<Option<f64>>().map(|s| s / n)
        };
        Self {
            heatmap: avg(&|s| s.heatmap),
            size: avg(&|s| s.size),
            det: avg(&|s| s.det),
            seg: avg(&|s| s.seg),
            total: steps.iter().map(|s| s.total).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train: LossSummary,
    /// Metrics JSON (percentages) when validated this epoch.
    pub validation: Option<serde_json::Value>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestCheckpoint {
    pub epoch: usize,
    /// `AP50` for detection modes, `miou` for segmentation only.
    pub metric: String,
    pub value: f64,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    /// SHA-256 over the crate version, the config and the split ids.
    pub fingerprint: String,
    pub source: String,
    pub epochs: Vec<EpochRecord>,
    pub best: Option<BestCheckpoint>,
    /// Every step in order; also streamed to `log.jsonl`.
    #[serde(skip)]
    pub steps: Vec<StepLog>,
}

fn fingerprint(config: &TrainConfig, train: &[&Sample], val: &[&Sample]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).as_bytes());
    h.update(serde_json::to_vec(config)?);
    for (tag, set) in [("train", train), ("val", val)] {
        h.update(tag.as_bytes());
        for s in set {
            h.update(s.id.as_bytes());
            h.update([0]);
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Consecutive chunks of `batch_size`; a trailing single sample joins the
/// previous chunk so every batch has at least two images.
fn batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(last);
    }
    out
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

struct RunDir {
    root: PathBuf,
    log: BufWriter<File>,
}

impl RunDir {
    fn create(root: &Path, config: &TrainConfig) -> Result<Self> {
        create_dir(&root.join("checkpoints"))?;
        create_dir(&root.join("metrics"))?;
        write_json(&root.join("config.echo"), config)?;
        let log_path = root.join("log.jsonl");
        let log = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        Ok(Self { root: root.to_path_buf(), log: BufWriter::new(log) })
    }

    fn log(&mut self, step: &StepLog) -> Result<()> {
        let path = self.root.join("log.jsonl");
        serde_json::to_writer(&mut self.log, step)?;
        self.log.write_all(b"\n").map_err(|e| Error::io(&path, e))
    }

    fn flush(&mut self) -> Result<()> {
        let path = self.root.join("log.jsonl");
        self.log.flush().map_err(|e| Error::io(path, e))
    }
}

/// One training batch: augmented, resized, stacked inputs and encoded targets.
fn build_batch(
    samples: &[&Sample],
    config: &TrainConfig,
    channels: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<f32>, BatchTargets)> {
    let mut prepared = Vec::with_capacity(samples.len());
    for s in samples {
        let mut s = if config.augment { augment(s, &config.augmentation, rng)? } else { (*s).clone() };
        if config.input_size > 0 {
            s = resize_sample(&s, config.input_size, config.input_size)?;
        }
        prepared.push(s);
    }
    let inputs = prepared
        .iter()
        .map(|s| prepare_input(&s.image, 0, channels))
        .collect::<Result<Vec<_>>>()?;
    let x = Tensor::stack(&inputs)?;
    let targets = BatchTargets::from_samples(&prepared, &config.loss.targets)?;
    Ok((x, targets))
}

/// Trains `model` in place. With a run directory, writes `config.echo`,
/// `log.jsonl`, `checkpoints/epoch_N.ckpt`, `metrics/epoch_N.json` and
/// `run.json`.
pub fn train_model(
    model: &mut MtuNet<f32>,
    config: &TrainConfig,
    train: &[&Sample],
    val: &[&Sample],
    run_dir: Option<&Path>,
) -> Result<RunRecord> {
    config.validate()?;
    if model.config().backbone != config.model.backbone || model.task() != config.model.mode.task {
        return Err(Error::Config("model does not match the training config".into()));
    }
    if train.len() < 2 {
        return Err(Error::Dataset(format!("training needs at least 2 images, got {}", train.len())));
    }
    let fingerprint = fingerprint(config, train, val)?;
    let mut dir = run_dir.map(|d| RunDir::create(d, config)).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut sgd = Sgd::new(SgdConfig { lr: config.lr, momentum: config.momentum, weight_decay: config.weight_decay });
    let tasks = EvalTasks::of(model.task());
    let channels = model.config().backbone.in_channels;
    let metric_name = if tasks.detection { "AP50" } else { "miou" };
    let mut record = RunRecord {
        config: config.clone(),
        fingerprint,
        source: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
        epochs: Vec::with_capacity(config.epochs),
        best: None,
        steps: Vec::new(),
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        sgd.set_lr(lr);
        order.shuffle(&mut rng);
        let first_step = record.steps.len();
        for (step, idx) in batches(&order, config.batch_size).into_iter().enumerate() {
            let chunk: Vec<&Sample> = idx.iter().map(|&i| train[i]).collect();
            let ids: Vec<String> = chunk.iter().map(|s| s.id.clone()).collect();
            let (x, targets) = build_batch(&chunk, config, channels, &mut rng)?;
            model.zero_grad();
            let outputs = model.forward(&x)?;
            let (loss, grads) = batch_loss(&outputs, &targets, &config.loss)?;
            let log = StepLog::new(epoch + 1, step, lr, ids, &loss);
            if !loss.total.total.is_finite() {
                let msg = format!("non-finite loss at epoch {} step {step}, batch {:?}", epoch + 1, log.batch);
                if let Some(d) = &mut dir {
                    d.flush()?;
                    let replay = DivergedBatch {
                        epoch: log.epoch,
                        step,
                        lr,
                        seed: config.seed,
                        batch: log.batch.clone(),
                        losses: format!("{:?}", loss),
                    };
                    write_json(&d.root.join(DIVERGED_FILE), &replay)?;
                    return Err(Error::Diverged(format!("{msg}; saved to {}", d.root.join(DIVERGED_FILE).display())));
                }
                return Err(Error::Diverged(msg));
            }
            model.backward(&grads)?;
            sgd.step(model);
            if let Some(d) = &mut dir {
                d.log(&log)?;
            }
            record.steps.push(log);
        }
        let summary = LossSummary::mean(&record.steps[first_step..]);
        let mut epoch_record = EpochRecord { epoch: epoch + 1, lr, train: summary, validation: None, checkpoint: None };
        let last = epoch + 1 == config.epochs;
        if (epoch + 1) % config.val_every == 0 || last {
            if let Some(d) = &mut dir {
                d.flush()?;
                let path = d.root.join("checkpoints").join(format!("epoch_{}.ckpt", epoch + 1));
                let extra = BTreeMap::from([
                    ("epoch".to_string(), (epoch + 1).to_string()),
                    ("fingerprint".to_string(), record.fingerprint.clone()),
                    (TRAIN_CONFIG_KEY.to_string(), serde_json::to_string(config)?),
                ]);
                model.save(&path, &extra)?;
                epoch_record.checkpoint = Some(path);
            }
            if !val.is_empty() {
                let eval = evaluate(model, val, config.input_size, &config.postprocess, "val", tasks)?;
                let json = eval.report.to_json();
                if let Some(d) = &dir {
                    write_json(&d.root.join("metrics").join(format!("epoch_{}.json", epoch + 1)), &json)?;
                }
                let value = json.get(metric_name).and_then(|v| v.as_f64()).unwrap_or(0.0);
                if record.best.as_ref().is_none_or(|b| value > b.value) {
                    record.best = Some(BestCheckpoint {
                        epoch: epoch + 1,
                        metric: metric_name.to_string(),
                        value,
                        checkpoint: epoch_record.checkpoint.clone(),
                    });
                }
                epoch_record.validation = Some(json);
            }
        }
        record.epochs.push(epoch_record);
    }
    if let Some(d) = &mut dir {
        d.flush()?;
        write_json(&d.root.join("run.json"), &record)?;
    }
    Ok(record)
}

/// Builds the model from `config` (seeded), loads the pretrained backbone
/// named in the config if any, and trains on the dataset's splits.
pub fn train(config: &TrainConfig, dataset: &Dataset, run_dir: &Path) -> Result<RunRecord> {
    config.validate()?;
    let mut model_config = config.model.clone();
    let pretrained = model_config.mode.pretrained_from.take();
    let mut model = MtuNet::<f32>::new(model_config, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
    if let Some(src) = &pretrained {
        let ckpt = Checkpoint::load(src)?;
        model.load_pretrained_backbone(&ckpt, src)?;
    }
    let mut config = config.clone();
    config.model = model.config().clone();
    let train = dataset.train()?;
    let val = dataset.val()?;
    train_model(&mut model, &config, &train, &val, Some(run_dir))
}
