use mtnet_nn::module::join;
use mtnet_nn::{Conv2d, Module, Real, Relu, Sigmoid, Tensor, TensorMut, TensorRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{FeatureMap, FEATURE_CHANNELS};
use crate::error::{Error, Result};

/// Initial foreground probability of the heatmap output.
pub const HEATMAP_PRIOR: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionHeadConfig {
    /// Build the sub-pixel offset branch.
    pub offset: bool,
}

impl Default for DetectionHeadConfig {
    fn default() -> Self {
        Self { offset: false }
    }
}

/// 3×3 conv → ReLU → 1×1 conv.
#[derive(Clone, Debug)]
struct Branch<T> {
    hidden: Conv2d<T>,
    relu: Relu<T>,
    out: Conv2d<T>,
}

impl<T: Real> Branch<T> {
    fn new<R: Rng + ?Sized>(out_channels: usize, rng: &mut R) -> Self {
        Self {
            hidden: Conv2d::new(FEATURE_CHANNELS, FEATURE_CHANNELS, 3, true, rng),
            relu: Relu::new(),
            out: Conv2d::new(FEATURE_CHANNELS, out_channels, 1, true, rng),
        }
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.out.infer(&self.relu.infer(&self.hidden.infer(x)?))?)
    }

    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.hidden.forward(x)?;
        let h = self.relu.forward(&h);
        Ok(self.out.forward(&h)?)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.out.backward(g)?;
        let g = self.relu.backward(&g)?;
        Ok(self.hidden.backward(&g)?)
    }
}

impl<T: Real> Module<T> for Branch<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorRef<'_, T>)) {
        self.hidden.visit(&join(prefix, "0"), f);
        self.out.visit(&join(prefix, "2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorMut<'_, T>)) {
        self.hidden.visit_mut(&join(prefix, "0"), f);
        self.out.visit_mut(&join(prefix, "2"), f);
    }
}

/// Predicted maps for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionOutputs<T> {
    /// `[N, 1, H, W]`, values in (0, 1).
    pub heatmap: Tensor<T>,
    /// `[N, 2, H, W]`: width plane then height plane, in pixels.
    pub size: Tensor<T>,
    /// `[N, 2, H, W]` when the offset branch is built.
    pub offset: Option<Tensor<T>>,
}

/// Loss gradients w.r.t. the head outputs.
#[derive(Clone, Debug)]
pub struct DetectionGrads<T> {
    /// Gradient w.r.t. the post-sigmoid heatmap.
    pub heatmap: Tensor<T>,
    pub size: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct DetectionHead<T> {
    config: DetectionHeadConfig,
    heatmap: Branch<T>,
    sigmoid: Sigmoid<T>,
    size: Branch<T>,
    offset: Option<Branch<T>>,
}

impl<T: Real> DetectionHead<T> {
    pub fn new<R: Rng + ?Sized>(config: DetectionHeadConfig, rng: &mut R) -> Self {
        let mut heatmap = Branch::new(1, rng);
        let prior_logit = (HEATMAP_PRIOR / (1.0 - HEATMAP_PRIOR)).ln();
        if let Some(b) = &mut heatmap.out.bias {
            b.value.fill(T::of(prior_logit));
        }
        Self {
            heatmap,
            sigmoid: Sigmoid::new(),
            size: Branch::new(2, rng),
            offset: config.offset.then(|| Branch::new(2, rng)),
            config,
        }
    }

    pub fn config(&self) -> &DetectionHeadConfig {
        &self.config
    }

    fn check(feature: &FeatureMap<T>) -> Result<&Tensor<T>> {
        let t = feature.tensor();
        if t.channels() != FEATURE_CHANNELS {
            return Err(Error::Shape(format!("detection head needs {FEATURE_CHANNELS} channels, got {}", t.channels())));
        }
        Ok(t)
    }

    pub fn infer(&self, feature: &FeatureMap<T>) -> Result<DetectionOutputs<T>> {
        let x = Self::check(feature)?;
        Ok(DetectionOutputs {
            heatmap: self.sigmoid.infer(&self.heatmap.infer(x)?),
            size: self.size.infer(x)?,
            offset: self.offset.as_ref().map(|b| b.infer(x)).transpose()?,
        })
    }

    pub fn forward(&mut self, feature: &FeatureMap<T>) -> Result<DetectionOutputs<T>> {
        let x = Self::check(feature)?;
        let logits = self.heatmap.forward(x)?;
        Ok(DetectionOutputs {
            heatmap: self.sigmoid.forward(&logits),
            size: self.size.forward(x)?,
            offset: self.offset.as_mut().map(|b| b.forward(x)).transpose()?,
        })
    }

    /// Back-propagates output gradients; returns the feature-map gradient.
    ///
    /// The offset branch receives no gradient (it has no loss term).
    pub fn backward(&mut self, grads: &DetectionGrads<T>) -> Result<Tensor<T>> {
        let g_logits = self.sigmoid.backward(&grads.heatmap)?;
        let mut g = self.heatmap.backward(&g_logits)?;
        g.add_assign(&self.size.backward(&grads.size)?)?;
        if let Some(b) = &mut self.offset {
            let [n, _, h, w] = grads.size.shape();
            g.add_assign(&b.backward(&Tensor::zeros([n, 2, h, w]))?)?;
        }
        Ok(g)
    }
}

impl<T: Real> Module<T> for DetectionHead<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorRef<'_, T>)) {
        self.heatmap.visit(&join(prefix, "heatmap"), f);
        self.size.visit(&join(prefix, "size"), f);
        if let Some(b) = &self.offset {
            b.visit(&join(prefix, "offset"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorMut<'_, T>)) {
        self.heatmap.visit_mut(&join(prefix, "heatmap"), f);
        self.size.visit_mut(&join(prefix, "size"), f);
        if let Some(b) = &mut self.offset {
            b.visit_mut(&join(prefix, "offset"), f);
        }
    }
}
