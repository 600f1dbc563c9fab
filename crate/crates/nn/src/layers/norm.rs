use crate::error::{NnError, Result};
use crate::module::{join, Module, Param, TensorMut, TensorRef};
use crate::real::Real;
use crate::tensor::Tensor;

use super::missing_cache;

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
struct Cache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<f64>,
}

/// Per-channel batch normalization.
///
/// Training mode normalizes with batch statistics and folds them into the
/// running estimates (unbiased variance); inference uses the running estimates.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    channels: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    cache: Option<Cache<T>>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        let shape = [channels, 1, 1, 1];
        Self {
            channels,
            weight: Param::new(Tensor::full(shape, T::one()), false),
            bias: Param::new(Tensor::zeros(shape), false),
            running_mean: Tensor::zeros(shape),
            running_var: Tensor::full(shape, T::one()),
            cache: None,
        }
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.channels {
            return Err(NnError::Shape {
                expected: vec![x.batch(), self.channels, x.height(), x.width()],
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let mut y = x.clone();
        for c in 0..self.channels {
            let inv = T::one() / (self.running_var.data()[c] + T::of(EPS)).sqrt();
            let scale = self.weight.value.data()[c] * inv;
            let shift = self.bias.value.data()[c] - self.running_mean.data()[c] * scale;
            for n in 0..x.batch() {
                y.plane_mut(n, c).iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let [n, c, h, w] = x.shape();
        let count = n * h * w;
        if count < 2 {
            return Err(NnError::Invalid(
                "batch norm in training mode needs more than one value per channel".into(),
            ));
        }
        let mut normalized = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0; c];
        for ci in 0..c {
            let mut sum = 0.0;
            for ni in 0..n {
                sum += x.plane(ni, ci).iter().map(|v| v.as_f64()).sum::<f64>();
            }
            let mean = sum / count as f64;
            let mut sq = 0.0;
            for ni in 0..n {
                sq += x.plane(ni, ci).iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
            }
            let var = sq / count as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            inv_std[ci] = inv;
            let gamma = self.weight.value.data()[ci];
            let beta = self.bias.value.data()[ci];
            for ni in 0..n {
                let src = x.plane(ni, ci);
                let xn = normalized.plane_mut(ni, ci);
                for (d, &s) in xn.iter_mut().zip(src) {
                    *d = T::of((s.as_f64() - mean) * inv);
                }
                let xn = normalized.plane(ni, ci);
                for (d, &s) in y.plane_mut(ni, ci).iter_mut().zip(xn) {
                    *d = gamma * s + beta;
                }
            }
            let unbiased = var * count as f64 / (count - 1) as f64;
            let rm = &mut self.running_mean.data_mut()[ci];
            *rm = T::of((1.0 - MOMENTUM) * rm.as_f64() + MOMENTUM * mean);
            let rv = &mut self.running_var.data_mut()[ci];
            *rv = T::of((1.0 - MOMENTUM) * rv.as_f64() + MOMENTUM * unbiased);
        }
        self.cache = Some(Cache { normalized, inv_std });
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let Cache { normalized, inv_std } = self.cache.take().ok_or_else(|| missing_cache("batch_norm"))?;
        normalized.check_same_shape(grad)?;
        let [n, c, h, w] = grad.shape();
        let m = (n * h * w) as f64;
        let mut dx = Tensor::zeros(grad.shape());
        for ci in 0..c {
            let mut dbeta = 0.0;
            let mut dgamma = 0.0;
            for ni in 0..n {
                for (&g, &xn) in grad.plane(ni, ci).iter().zip(normalized.plane(ni, ci)) {
                    dbeta += g.as_f64();
                    dgamma += g.as_f64() * xn.as_f64();
                }
            }
            let gw = &mut self.weight.grad.data_mut()[ci];
            *gw = *gw + T::of(dgamma);
            let gb = &mut self.bias.grad.data_mut()[ci];
            *gb = *gb + T::of(dbeta);
            let k = self.weight.value.data()[ci].as_f64() * inv_std[ci] / m;
            for ni in 0..n {
                let g = grad.plane(ni, ci);
                let xn = normalized.plane(ni, ci);
                for ((d, &gi), &xi) in dx.plane_mut(ni, ci).iter_mut().zip(g).zip(xn) {
                    *d = T::of(k * (m * gi.as_f64() - dbeta - xi.as_f64() * dgamma));
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorRef<'_, T>)) {
        f(&join(prefix, "weight"), TensorRef::Param(&self.weight));
        f(&join(prefix, "bias"), TensorRef::Param(&self.bias));
        f(&join(prefix, "running_mean"), TensorRef::Buffer(&self.running_mean));
        f(&join(prefix, "running_var"), TensorRef::Buffer(&self.running_var));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorMut<'_, T>)) {
        f(&join(prefix, "weight"), TensorMut::Param(&mut self.weight));
        f(&join(prefix, "bias"), TensorMut::Param(&mut self.bias));
        f(&join(prefix, "running_mean"), TensorMut::Buffer(&mut self.running_mean));
        f(&join(prefix, "running_var"), TensorMut::Buffer(&mut self.running_var));
    }
}
