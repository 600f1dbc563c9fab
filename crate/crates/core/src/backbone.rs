//! UNet encoder–decoder producing a full-resolution 64-channel feature map.

use std::sync::atomic::{AtomicUsize, Ordering};

use mtnet_nn::module::join;
use mtnet_nn::{
    BatchNorm2d, BilinearResize, Conv2d, ConvBnRelu, ConvTranspose2x2, MaxPool2x2, Module, Real, Tensor, TensorMut,
    TensorRef,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel count of the shared feature map.
pub const FEATURE_CHANNELS: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsampling {
    /// 1×1 convolution followed by ×2 bilinear interpolation, norm and ReLU.
    #[default]
    Interp,
    /// 2×2 stride-2 transposed convolution, norm and ReLU.
    Transposed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub in_channels: usize,
    /// Number of 2× down-samplings.
    pub depth: usize,
    /// Channels at full resolution; doubled at every level.
    pub base_width: usize,
    pub upsampling: Upsampling,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { in_channels: 1, depth: 4, base_width: 64, upsampling: Upsampling::Interp }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.in_channels == 0 {
            problems.push("in_channels must be positive".to_string());
        }
        if self.depth == 0 || self.depth > 10 {
            problems.push(format!("depth must be in 1..=10, got {}", self.depth));
        }
        if self.base_width == 0 {
            problems.push("base_width must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Required divisor of the input height and width.
    pub fn stride(&self) -> usize {
        1 << self.depth
    }

    pub fn check_input_dims(&self, height: usize, width: usize) -> Result<()> {
        let s = self.stride();
        if height == 0 || width == 0 || height % s != 0 || width % s != 0 {
            return Err(Error::Dimension(format!(
                "input {height}×{width} is not a multiple of {s} (depth {})",
                self.depth
            )));
        }
        Ok(())
    }

    /// Names every field that differs from `other`.
    pub fn differences(&self, other: &BackboneConfig) -> Vec<String> {
        let mut out = Vec::new();
        if self.in_channels != other.in_channels {
            out.push(format!("in_channels {} vs {}", self.in_channels, other.in_channels));
        }
        if self.depth != other.depth {
            out.push(format!("depth {} vs {}", self.depth, other.depth));
        }
        if self.base_width != other.base_width {
            out.push(format!("base_width {} vs {}", self.base_width, other.base_width));
        }
        if self.upsampling != other.upsampling {
            out.push(format!("upsampling {:?} vs {:?}", self.upsampling, other.upsampling));
        }
        out
    }
}

/// Backbone output for a batch: `[N, 64, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T>(Tensor<T>);

impl<T: Real> FeatureMap<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        if tensor.channels() != FEATURE_CHANNELS {
            return Err(Error::Shape(format!(
                "feature map must have {FEATURE_CHANNELS} channels, got {}",
                tensor.channels()
            )));
        }
        Ok(Self(tensor))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }
}

#[derive(Clone, Debug)]
struct DoubleConv<T> {
    first: ConvBnRelu<T>,
    second: ConvBnRelu<T>,
}

impl<T: Real> DoubleConv<T> {
    fn new<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        Self { first: ConvBnRelu::new(cin, cout, 3, rng), second: ConvBnRelu::new(cout, cout, 3, rng) }
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.second.infer(&self.first.infer(x)?)?)
    }

    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.first.forward(x)?;
        Ok(self.second.forward(&h)?)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.second.backward(g)?;
        Ok(self.first.backward(&g)?)
    }
}

impl<T: Real> Module<T> for DoubleConv<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorRef<'_, T>)) {
        self.first.visit(&join(prefix, "conv1"), f);
        self.second.visit(&join(prefix, "conv2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorMut<'_, T>)) {
        self.first.visit_mut(&join(prefix, "conv1"), f);
        self.second.visit_mut(&join(prefix, "conv2"), f);
    }
}

#[derive(Clone, Debug)]
enum UpKernel<T> {
    // The 1×1 projection runs before interpolation; both are linear and the
    // interpolation weights sum to one, so the order does not change the result.
    Interp { project: Conv2d<T>, resize: BilinearResize },
    Transposed { deconv: ConvTranspose2x2<T> },
}

#[derive(Clone, Debug)]
struct UpBlock<T> {
    kernel: UpKernel<T>,
    norm: BatchNorm2d<T>,
    output: Option<Tensor<T>>,
}

impl<T: Real> UpBlock<T> {
    fn new<R: Rng + ?Sized>(kind: Upsampling, cin: usize, cout: usize, rng: &mut R) -> Self {
        let kernel = match kind {
            Upsampling::Interp => UpKernel::Interp {
                project: Conv2d::new(cin, cout, 1, false, rng),
                resize: BilinearResize::new(0, 0),
            },
            Upsampling::Transposed => UpKernel::Transposed { deconv: ConvTranspose2x2::new(cin, cout, false, rng) },
        };
        Self { kernel, norm: BatchNorm2d::new(cout), output: None }
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = match &self.kernel {
            UpKernel::Interp { project, .. } => {
                BilinearResize::apply(&project.infer(x)?, 2 * x.height(), 2 * x.width())?
            }
            UpKernel::Transposed { deconv } => deconv.infer(x)?,
        };
        let mut y = self.norm.infer(&h)?;
        y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        Ok(y)
    }

    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = match &mut self.kernel {
            UpKernel::Interp { project, resize } => {
                *resize = BilinearResize::new(2 * x.height(), 2 * x.width());
                let p = project.forward(x)?;
                resize.forward(&p)?
            }
            UpKernel::Transposed { deconv } => deconv.forward(x)?,
        };
        let mut y = self.norm.forward(&h)?;
        y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        self.output = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self
            .output
            .take()
            .ok_or_else(|| Error::Invalid("up block: backward without forward".into()))?;
        let mut g = g.clone();
        for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
            if yv <= T::zero() {
                *gv = T::zero();
            }
        }
        let g = self.norm.backward(&g)?;
        Ok(match &mut self.kernel {
            UpKernel::Interp { project, resize } => project.backward(&resize.backward(&g)?)?,
            UpKernel::Transposed { deconv } => deconv.backward(&g)?,
        })
    }
}

impl<T: Real> Module<T> for UpBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorRef<'_, T>)) {
        match &self.kernel {
            UpKernel::Interp { project, .. } => project.visit(&join(prefix, "conv"), f),
            UpKernel::Transposed { deconv } => deconv.visit(&join(prefix, "deconv"), f),
        }
        self.norm.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorMut<'_, T>)) {
        match &mut self.kernel {
            UpKernel::Interp { project, .. } => project.visit_mut(&join(prefix, "conv"), f),
            UpKernel::Transposed { deconv } => deconv.visit_mut(&join(prefix, "deconv"), f),
        }
        self.norm.visit_mut(&join(prefix, "bn"), f);
    }
}

#[derive(Clone, Debug)]
struct DecoderStage<T> {
    up: UpBlock<T>,
    fuse: DoubleConv<T>,
    skip_channels: usize,
}

/// UNet with `depth` max-pool down-samplings and skip concatenation.
///
/// Level `i` carries `base_width · 2^i` channels. When `base_width` differs
/// from 64 a 1×1 conv-norm-ReLU maps the decoder output to 64 channels.
#[derive(Debug)]
pub struct Backbone<T> {
    config: BackboneConfig,
    stem: DoubleConv<T>,
    pools: Vec<MaxPool2x2>,
    encoder: Vec<DoubleConv<T>>,
    decoder: Vec<DecoderStage<T>>,
    project: Option<ConvBnRelu<T>>,
    calls: AtomicUsize,
}

impl<T: Real> Clone for Backbone<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            stem: self.stem.clone(),
            pools: self.pools.clone(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            project: self.project.clone(),
            calls: AtomicUsize::new(self.calls.load(Ordering::Relaxed)),
        }
    }
}

impl<T: Real> Backbone<T> {
    pub fn new<R: Rng + ?Sized>(config: BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let width = |level: usize| config.base_width << level;
        let stem = DoubleConv::new(config.in_channels, width(0), rng);
        let encoder = (1..=config.depth).map(|i| DoubleConv::new(width(i - 1), width(i), rng)).collect();
        let decoder = (1..=config.depth)
            .rev()
            .map(|i| DecoderStage {
                up: UpBlock::new(config.upsampling, width(i), width(i - 1), rng),
                fuse: DoubleConv::new(2 * width(i - 1), width(i - 1), rng),
                skip_channels: width(i - 1),
            })
            .collect();
        let project = (config.base_width != FEATURE_CHANNELS).then(|| ConvBnRelu::new(width(0), FEATURE_CHANNELS, 1, rng));
        Ok(Self {
            pools: vec![MaxPool2x2::new(); config.depth],
            config,
            stem,
            encoder,
            decoder,
            project,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Number of forward evaluations since construction (or the last reset).
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_call_count(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.config.in_channels {
            return Err(Error::Shape(format!(
                "backbone expects {} input channels, got {}",
                self.config.in_channels,
                x.channels()
            )));
        }
        self.config.check_input_dims(x.height(), x.width())
    }

    /// Inference-mode forward (running norm statistics, no caching).
    pub fn infer(&self, x: &Tensor<T>) -> Result<FeatureMap<T>> {
        self.check(x)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut skips = vec![self.stem.infer(x)?];
        for (pool, block) in self.pools.iter().zip(&self.encoder) {
            let pooled = pool.infer(skips.last().expect("nonempty"))?;
            skips.push(block.infer(&pooled)?);
        }
        let mut cur = skips.pop().expect("nonempty");
        for stage in &self.decoder {
            let up = stage.up.infer(&cur)?;
            let skip = skips.pop().expect("one skip per stage");
            cur = stage.fuse.infer(&Tensor::concat_channels(&[&skip, &up])?)?;
        }
        if let Some(p) = &self.project {
            cur = p.infer(&cur)?;
        }
        FeatureMap::new(cur)
    }

    /// Training-mode forward: batch statistics, caches kept for [`Backbone::backward`].
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<FeatureMap<T>> {
        self.check(x)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut skips = vec![self.stem.forward(x)?];
        for (pool, block) in self.pools.iter_mut().zip(&mut self.encoder) {
            let pooled = pool.forward(skips.last().expect("nonempty"))?;
            skips.push(block.forward(&pooled)?);
        }
        let mut cur = skips.pop().expect("nonempty");
        for stage in &mut self.decoder {
            let up = stage.up.forward(&cur)?;
            let skip = skips.pop().expect("one skip per stage");
            cur = stage.fuse.forward(&Tensor::concat_channels(&[&skip, &up])?)?;
        }
        if let Some(p) = &mut self.project {
            cur = p.forward(&cur)?;
        }
        FeatureMap::new(cur)
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = match &mut self.project {
            Some(p) => p.backward(grad)?,
            None => grad.clone(),
        };
        // Stages run deepest first, so reversed order yields level 0 first.
        let mut skip_grads = Vec::with_capacity(self.decoder.len());
        for stage in self.decoder.iter_mut().rev() {
            let gcat = stage.fuse.backward(&g)?;
            let mut parts = gcat.split_channels(&[stage.skip_channels, gcat.channels() - stage.skip_channels])?;
            let gup = parts.pop().expect("two parts");
            skip_grads.push(parts.pop().expect("two parts"));
            g = stage.up.backward(&gup)?;
        }
        for (level, (pool, block)) in self.pools.iter_mut().zip(&mut self.encoder).enumerate().rev() {
            g = block.backward(&g)?;
            g = pool.backward(&g)?;
            g.add_assign(&skip_grads[level])?;
        }
        Ok(self.stem.backward(&g)?)
    }
}

impl<T: Real> Module<T> for Backbone<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorRef<'_, T>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (i, block) in self.encoder.iter().enumerate() {
            block.visit(&join(prefix, &format!("down.{i}")), f);
        }
        for (i, stage) in self.decoder.iter().enumerate() {
            stage.up.visit(&join(prefix, &format!("up.{i}.upsample")), f);
            stage.fuse.visit(&join(prefix, &format!("up.{i}.fuse")), f);
        }
        if let Some(p) = &self.project {
            p.visit(&join(prefix, "project"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorMut<'_, T>)) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        for (i, block) in self.encoder.iter_mut().enumerate() {
            block.visit_mut(&join(prefix, &format!("down.{i}")), f);
        }
        for (i, stage) in self.decoder.iter_mut().enumerate() {
            stage.up.visit_mut(&join(prefix, &format!("up.{i}.upsample")), f);
            stage.fuse.visit_mut(&join(prefix, &format!("up.{i}.fuse")), f);
        }
        if let Some(p) = &mut self.project {
            p.visit_mut(&join(prefix, "project"), f);
        }
    }
}
