use rand::Rng;

use crate::error::Result;
use crate::module::{join, Module, TensorMut, TensorRef};
use crate::real::Real;
use crate::tensor::Tensor;

use super::activation::{relu_backward_in_place, relu_in_place};
use super::{missing_cache, BatchNorm2d, Conv2d};

/// Bias-free convolution, batch norm, ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu<T> {
    pub conv: Conv2d<T>,
    pub norm: BatchNorm2d<T>,
    output: Option<Tensor<T>>,
}

impl<T: Real> ConvBnRelu<T> {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(in_channels, out_channels, kernel, false, rng),
            norm: BatchNorm2d::new(out_channels),
            output: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = self.norm.infer(&self.conv.infer(x)?)?;
        relu_in_place(&mut y);
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.conv.forward(x)?;
        let mut y = self.norm.forward(&h)?;
        relu_in_place(&mut y);
        self.output = Some(y.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.output.take().ok_or_else(|| missing_cache("conv_bn_relu"))?;
        y.check_same_shape(grad)?;
        let mut g = grad.clone();
        relu_backward_in_place(&mut g, &y);
        let g = self.norm.backward(&g)?;
        self.conv.backward(&g)
    }
}

impl<T: Real> Module<T> for ConvBnRelu<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorRef<'_, T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorMut<'_, T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.norm.visit_mut(&join(prefix, "bn"), f);
    }
}
