mod bench;
mod config;
mod error;
mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtnet_core::data::{load_dataset, prepare_data, synth_generate, write_dataset, SplitSpec};
use mtnet_core::evaluation::pr_curve;
use mtnet_core::geometry::BBox;
use mtnet_core::model::{MtuNet, TaskMode};
use mtnet_core::trainer::{evaluate_checkpoint, train, write_predictions, EvalTasks, TrainConfig, TRAIN_CONFIG_KEY};
use mtnet_nn::Checkpoint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{data_root, CliConfig};
use crate::error::{CliError, Result};

#[derive(Parser)]
#[command(name = "mtnet", version, about = "Multi-task small-target detection and segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pair images with masks, derive boxes, write annotations and a split.
    PrepareData(PrepareArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write metrics, plots and overlays.
    Eval(EvalArgs),
    /// Time single-image inference.
    Bench(BenchArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Directory with images/ and masks/ (default: MTNET_DATA_ROOT).
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Seeds both generation and the split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Seg,
    Det,
    Multitask,
}

impl From<ModeArg> for TaskMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Seg => TaskMode::SegOnly,
            ModeArg::Det => TaskMode::DetOnly,
            ModeArg::Multitask => TaskMode::Multitask,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (default: data.root, then MTNET_DATA_ROOT).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Checkpoint whose backbone initializes this run.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TasksArg {
    Det,
    Seg,
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// train, val or all.
    #[arg(long, default_value = "val")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the input size and postprocess settings stored in the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input_size: Option<usize>,
    /// Metrics to compute (default: every head the checkpoint has).
    #[arg(long, value_enum)]
    tasks: Option<TasksArg>,
}

#[derive(Args)]
struct BenchArgs {
    /// Without a checkpoint a freshly initialized model is timed.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "multitask")]
    mode: ModeArg,
    #[arg(long, default_value_t = 64)]
    base_width: usize,
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 320)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also time seg-only and det-only models and report the ratio.
    #[arg(long)]
    compare: bool,
    /// Write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn cmd_prepare(args: PrepareArgs) -> Result<()> {
    let source = data_root(args.source, &CliConfig::default())?;
    let spec = SplitSpec { train_fraction: args.train_fraction, seed: args.seed };
    let report = prepare_data(&source, &args.out, &spec)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = CliConfig::load_or_default(args.config.as_deref())?;
    let mut synth = cfg.synth;
    synth.count = args.count.unwrap_or(synth.count);
    synth.height = args.height.unwrap_or(synth.height);
    synth.width = args.width.unwrap_or(synth.width);
    let samples = synth_generate(&synth, &mut ChaCha8Rng::seed_from_u64(args.seed))?;
    let spec = SplitSpec { seed: args.seed, ..cfg.data.split };
    let ds = write_dataset(&args.out, &samples, &spec)?;
    println!(
        "wrote {} images ({} boxes) to {}: {} train / {} val",
        ds.samples.len(),
        ds.coco.annotations.len(),
        args.out.display(),
        ds.split.train.len(),
        ds.split.val.len()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = CliConfig::load_or_default(args.config.as_deref())?;
    let root = data_root(args.data, &cfg)?;
    let mut tc: TrainConfig = cfg.train;
    if let Some(m) = args.mode {
        tc.model.mode.task = m.into();
    }
    if let Some(p) = args.pretrained {
        tc.model.mode.pretrained_from = Some(p.display().to_string());
    }
    tc.seed = args.seed.unwrap_or(tc.seed);
    tc.epochs = args.epochs.unwrap_or(tc.epochs);
    tc.validate().map_err(|e| CliError::Config {
        path: args.config.clone().unwrap_or_else(|| "<flags>".into()),
        problems: e.to_string().split("; ").map(str::to_string).collect(),
    })?;
    let dataset = load_dataset(&root)?;
    let record = train(&tc, &dataset, &args.out)?;
    if let Some(last) = record.epochs.last() {
        println!("epochs: {}  final train loss: {:.6}", last.epoch, last.train.total);
    }
    match &record.best {
        Some(b) => println!(
            "best {} {:.2} at epoch {} ({})",
            b.metric,
            b.value,
            b.epoch,
            b.checkpoint.as_ref().map_or("-".into(), |p| p.display().to_string())
        ),
        None => println!("no validation images; no best checkpoint"),
    }
    println!("run directory: {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let file_cfg = args.config.as_deref().map(CliConfig::load).transpose()?;
    let root = data_root(args.data, file_cfg.as_ref().unwrap_or(&CliConfig::default()))?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let stored: Option<TrainConfig> = ckpt.metadata.get(TRAIN_CONFIG_KEY).map(|s| serde_json::from_str(s)).transpose()?;
    let base = file_cfg.map(|c| c.train).or(stored).unwrap_or_default();
    let input_size = args.input_size.unwrap_or(base.input_size);
    let mode = MtuNet::<f32>::from_checkpoint(&ckpt)?.task();
    let tasks = match args.tasks {
        None => EvalTasks::of(mode),
        Some(TasksArg::Det) => EvalTasks { detection: true, segmentation: false },
        Some(TasksArg::Seg) => EvalTasks { detection: false, segmentation: true },
        Some(TasksArg::All) => EvalTasks { detection: true, segmentation: true },
    };
    let dataset = load_dataset(&root)?;
    let eval = evaluate_checkpoint(&args.checkpoint, &dataset, &args.split, input_size, &base.postprocess, Some(tasks))?;
    write_predictions(&args.out, &eval, &|id| dataset.image_id(id))?;
    let overlays = args.out.join("overlays");
    fs::create_dir_all(&overlays).map_err(|e| CliError::io(&overlays, e))?;
    let mut dets = Vec::new();
    let mut gts: Vec<Vec<BBox>> = Vec::new();
    for p in &eval.predictions {
        let sample = dataset
            .get(&p.id)
            .ok_or_else(|| mtnet_core::Error::Dataset(format!("unknown id {:?}", p.id)))?;
        let img = render::overlay(&sample.image, p.mask.as_ref(), p.detections.as_ref());
        let path = overlays.join(format!("{}.png", p.id));
        img.save(&path).map_err(|source| CliError::Image { path, source })?;
        if let Some(d) = &p.detections {
            dets.push(d.boxes.clone());
            gts.push(sample.boxes.iter().map(|b| b.extent()).collect());
        }
    }
    if eval.report.detection.is_some() {
        let curve = pr_curve(&dets, &gts, 0.5)?;
        write_file(&args.out.join("pr_curve.json"), serde_json::to_string_pretty(&curve)?)?;
        let path = args.out.join("pr_curve.png");
        render::pr_plot(&curve, 400).save(&path).map_err(|source| CliError::Image { path, source })?;
    }
    print!("{}", eval.report.table());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let model = match &args.checkpoint {
        Some(p) => MtuNet::<f32>::load(p)?,
        None => {
            let mut config = mtnet_core::model::ModelConfig::default();
            config.mode.task = args.mode.into();
            config.backbone.base_width = args.base_width;
            MtuNet::new(config, &mut ChaCha8Rng::seed_from_u64(args.seed))?
        }
    };
    let report = bench::bench(&model, args.n as usize, args.size, args.seed, args.compare)?;
    let line = |t: &bench::Timing| {
        println!(
            "{:<10} params {:>10}  mean {:>9.3} ms  median {:>9.3} ms  {:>8.2} img/s",
            t.mode, t.parameters, t.mean_ms, t.median_ms, t.images_per_sec
        )
    };
    println!("{}×{} input, {} warm-up + {} timed runs", report.image_size, report.image_size, report.warmup, report.runs);
    line(&report.model);
    if let Some(single) = &report.single_task {
        single.iter().for_each(line);
    }
    if let Some(r) = report.ratio {
        println!("ratio to seg-only + det-only: {r:.3}");
    }
    println!("note: {}", report.note);
    if let Some(out) = &args.out {
        write_file(out, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PrepareData(a) => cmd_prepare(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            for d in e.details() {
                eprintln!("{d}");
            }
            ExitCode::FAILURE
        }
    }
}
