//! Single-image inference timing.

use std::time::Instant;

use mtnet_core::model::{ModelConfig, MtuNet, TaskMode};
use mtnet_nn::{Module, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub mode: String,
    pub parameters: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub images_per_sec: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub image_size: usize,
    pub warmup: usize,
    pub runs: usize,
    pub model: Timing,
    /// Seg-only and det-only models with the same backbone, when compared.
    pub single_task: Option<[Timing; 2]>,
    /// Model mean over the sum of the single-task means.
    pub ratio: Option<f64>,
    pub note: String,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// `n` warm-up then `n` timed batch-of-one inferences.
pub fn time_model(model: &MtuNet<f32>, n: usize, size: usize, seed: u64) -> Result<Timing> {
    let channels = model.config().backbone.in_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::from_fn([1, channels, size, size], |_| rng.random::<f32>());
    for _ in 0..n {
        model.infer(&input)?;
    }
    let mut times = Vec::with_capacity(n);
    for _ in 0..n {
        let t = Instant::now();
        model.infer(&input)?;
        times.push(t.elapsed().as_secs_f64() * 1000.0);
    }
    times.sort_by(f64::total_cmp);
    let mean_ms = times.iter().sum::<f64>() / n as f64;
    Ok(Timing {
        mode: model.task().name().to_string(),
        parameters: model.parameter_count(),
        mean_ms,
        median_ms: median(&times),
        images_per_sec: 1000.0 / mean_ms,
    })
}

pub fn bench(model: &MtuNet<f32>, n: usize, size: usize, seed: u64, compare: bool) -> Result<BenchReport> {
    model.config().backbone.check_input_dims(size, size)?;
    let timing = time_model(model, n, size, seed)?;
    let single_task = if compare {
        let mut out = Vec::with_capacity(2);
        for task in [TaskMode::SegOnly, TaskMode::DetOnly] {
            let mut config: ModelConfig = model.config().clone();
            config.mode.task = task;
            let m = MtuNet::<f32>::new(config, &mut ChaCha8Rng::seed_from_u64(seed))?;
            out.push(time_model(&m, n, size, seed)?);
        }
        let [a, b]: [Timing; 2] = out.try_into().expect("two timings");
        Some([a, b])
    } else {
        None
    };
    let ratio = single_task.as_ref().map(|[s, d]| timing.mean_ms / (s.mean_ms + d.mean_ms));
    Ok(BenchReport {
        image_size: size,
        warmup: n,
        runs: n,
        model: timing,
        single_task,
        ratio,
        note: "absolute timings depend on the hardware; compare ratios across runs".into(),
    })
}
