use mtnet_nn::module::join;
use mtnet_nn::{AdaptiveAvgPool2d, BilinearResize, Conv2d, ConvBnRelu, Module, Real, Sigmoid, Tensor, TensorMut, TensorRef};
use rand::Rng;

use crate::backbone::{FeatureMap, FEATURE_CHANNELS};
use crate::error::{Error, Result};

pub const PYRAMID_BINS: [usize; 4] = [1, 2, 3, 6];
const BIN_CHANNELS: usize = 16;

#[derive(Clone, Debug)]
struct Level<T> {
    pool: AdaptiveAvgPool2d,
    reduce: ConvBnRelu<T>,
    resize: BilinearResize,
}

/// Pyramid pooling over the feature map, a 3×3 fusion block, and a sigmoid
/// classifier producing the target probability per pixel.
#[derive(Clone, Debug)]
pub struct PspHead<T> {
    levels: Vec<Level<T>>,
    fuse: ConvBnRelu<T>,
    classifier: Conv2d<T>,
    sigmoid: Sigmoid<T>,
}

impl<T: Real> PspHead<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let levels = PYRAMID_BINS
            .iter()
            .map(|&bins| Level {
                pool: AdaptiveAvgPool2d::new(bins),
                reduce: ConvBnRelu::new(FEATURE_CHANNELS, BIN_CHANNELS, 1, rng),
                resize: BilinearResize::new(0, 0),
            })
            .collect();
        Self {
            levels,
            fuse: ConvBnRelu::new(Self::context_channels(), FEATURE_CHANNELS, 3, rng),
            classifier: Conv2d::new(FEATURE_CHANNELS, 1, 1, true, rng),
            sigmoid: Sigmoid::new(),
        }
    }

    /// Channels entering the fusion block: the feature map plus every pyramid level.
    pub const fn context_channels() -> usize {
        FEATURE_CHANNELS + PYRAMID_BINS.len() * BIN_CHANNELS
    }

    fn check(feature: &FeatureMap<T>) -> Result<&Tensor<T>> {
        let x = feature.tensor();
        let min = PYRAMID_BINS[PYRAMID_BINS.len() - 1];
        if x.height() < min || x.width() < min {
            return Err(Error::Dimension(format!(
                "segmentation head needs at least {min}×{min} inputs, got {}×{}",
                x.height(),
                x.width()
            )));
        }
        Ok(x)
    }

    /// Average-pooled feature maps at each pyramid size, before channel reduction.
    pub fn pyramid(&self, feature: &FeatureMap<T>) -> Result<Vec<Tensor<T>>> {
        let x = Self::check(feature)?;
        self.levels.iter().map(|l| Ok(l.pool.infer(x)?)).collect()
    }

    /// The concatenated context tensor fed to the fusion block.
    pub fn context(&self, feature: &FeatureMap<T>) -> Result<Tensor<T>> {
        let x = Self::check(feature)?;
        let (h, w) = (x.height(), x.width());
        let mut parts = vec![x.clone()];
        for l in &self.levels {
            let reduced = l.reduce.infer(&l.pool.infer(x)?)?;
            parts.push(BilinearResize::apply(&reduced, h, w)?);
        }
        Ok(Tensor::concat_channels(&parts.iter().collect::<Vec<_>>())?)
    }

    /// Target probabilities `[N, 1, H, W]`.
    pub fn infer(&self, feature: &FeatureMap<T>) -> Result<Tensor<T>> {
        let ctx = self.context(feature)?;
        let logits = self.classifier.infer(&self.fuse.infer(&ctx)?)?;
        Ok(self.sigmoid.infer(&logits))
    }

    /// Training-mode forward. Batch norm after the 1×1 bin needs a batch of at
    /// least two images.
    pub fn forward(&mut self, feature: &FeatureMap<T>) -> Result<Tensor<T>> {
        let x = Self::check(feature)?;
        let (h, w) = (x.height(), x.width());
        let mut parts = vec![x.clone()];
        for l in &mut self.levels {
            let pooled = l.pool.forward(x)?;
            let reduced = l.reduce.forward(&pooled)?;
            l.resize = BilinearResize::new(h, w);
            parts.push(l.resize.forward(&reduced)?);
        }
        let ctx = Tensor::concat_channels(&parts.iter().collect::<Vec<_>>())?;
        let logits = self.classifier.forward(&self.fuse.forward(&ctx)?)?;
        Ok(self.sigmoid.forward(&logits))
    }

    /// Takes the gradient w.r.t. the probabilities; returns the feature-map gradient.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.sigmoid.backward(grad)?;
        let g = self.classifier.backward(&g)?;
        let g = self.fuse.backward(&g)?;
        let mut sizes = vec![FEATURE_CHANNELS];
        sizes.extend(std::iter::repeat_n(BIN_CHANNELS, self.levels.len()));
        let mut parts = g.split_channels(&sizes)?.into_iter();
        let mut dx = parts.next().expect("feature part");
        for (l, gp) in self.levels.iter_mut().zip(parts) {
            let g = l.resize.backward(&gp)?;
            let g = l.reduce.backward(&g)?;
            dx.add_assign(&l.pool.backward(&g)?)?;
        }
        Ok(dx)
    }
}

impl<T: Real> Module<T> for PspHead<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorRef<'_, T>)) {
        for (l, bins) in self.levels.iter().zip(PYRAMID_BINS) {
            l.reduce.visit(&join(prefix, &format!("pool{bins}")), f);
        }
        self.fuse.visit(&join(prefix, "fuse"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorMut<'_, T>)) {
        for (l, bins) in self.levels.iter_mut().zip(PYRAMID_BINS) {
            l.reduce.visit_mut(&join(prefix, &format!("pool{bins}")), f);
        }
        self.fuse.visit_mut(&join(prefix, "fuse"), f);
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}
