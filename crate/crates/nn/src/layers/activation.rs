use crate::error::Result;
use crate::real::Real;
use crate::tensor::Tensor;

use super::missing_cache;

#[derive(Clone, Debug, Default)]
pub struct Relu<T> {
    output: Option<Tensor<T>>,
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Self { output: None }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| v.max(T::zero()))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.infer(x);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.output.take().ok_or_else(|| missing_cache("relu"))?;
        y.check_same_shape(grad)?;
        let mut g = grad.clone();
        for (gi, &yi) in g.data_mut().iter_mut().zip(y.data()) {
            if yi <= T::zero() {
                *gi = T::zero();
            }
        }
        Ok(g)
    }
}

/// In-place ReLU used inside fused blocks.
pub(crate) fn relu_in_place<T: Real>(x: &mut Tensor<T>) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Zeroes `grad` wherever the ReLU output was clamped.
pub(crate) fn relu_backward_in_place<T: Real>(grad: &mut Tensor<T>, output: &Tensor<T>) {
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Sigmoid<T> {
    output: Option<Tensor<T>>,
}

#[inline]
pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Sigmoid<T> {
    pub fn new() -> Self {
        Self { output: None }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        x.map(sigmoid)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.infer(x);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.output.take().ok_or_else(|| missing_cache("sigmoid"))?;
        y.check_same_shape(grad)?;
        let mut g = grad.clone();
        for (gi, &yi) in g.data_mut().iter_mut().zip(y.data()) {
            *gi = *gi * yi * (T::one() - yi);
        }
        Ok(g)
    }
}
