use rand::Rng;

use crate::error::{NnError, Result};
use crate::gemm::{gemm, Layout};
use crate::init::kaiming_normal;
use crate::module::{join, Module, Param, TensorMut, TensorRef};
use crate::real::Real;
use crate::tensor::Tensor;

use super::missing_cache;

/// Transposed convolution with a 2×2 kernel and stride 2 (exact ×2 upsampling).
///
/// Weight layout is `[C_in, C_out, 2, 2]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2x2<T> {
    in_channels: usize,
    out_channels: usize,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    input: Option<Tensor<T>>,
}

impl<T: Real> ConvTranspose2x2<T> {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, bias: bool, rng: &mut R) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: Param::new(kaiming_normal([in_channels, out_channels, 2, 2], rng), true),
            bias: bias.then(|| Param::new(Tensor::zeros([out_channels, 1, 1, 1]), false)),
            input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(NnError::Shape {
                expected: vec![x.batch(), self.in_channels, x.height(), x.width()],
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let [n, cin, h, w] = x.shape();
        let hw = h * w;
        let taps = self.out_channels * 4;
        let mut out = Tensor::zeros([n, self.out_channels, 2 * h, 2 * w]);
        let mut tmp = vec![T::zero(); taps * hw];
        for ni in 0..n {
            gemm(taps, cin, hw, T::one(), self.weight.value.data(), Layout::transposed(taps), x.sample(ni), Layout::row_major(hw), T::zero(), &mut tmp, Layout::row_major(hw));
            for co in 0..self.out_channels {
                let b = self.bias.as_ref().map_or(T::zero(), |b| b.value.data()[co]);
                let plane = out.plane_mut(ni, co);
                for tap in 0..4 {
                    let (dy, dx) = (tap / 2, tap % 2);
                    let src = &tmp[(co * 4 + tap) * hw..(co * 4 + tap + 1) * hw];
                    for y in 0..h {
                        let row = (2 * y + dy) * 2 * w;
                        for x in 0..w {
                            plane[row + 2 * x + dx] = src[y * w + x] + b;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_cache("conv_transpose"))?;
        let [n, cin, h, w] = x.shape();
        grad.check_shape([n, self.out_channels, 2 * h, 2 * w])?;
        let hw = h * w;
        let taps = self.out_channels * 4;
        let mut gathered = vec![T::zero(); taps * hw];
        let mut dx = Tensor::zeros(x.shape());
        for ni in 0..n {
            for co in 0..self.out_channels {
                let plane = grad.plane(ni, co);
                if let Some(b) = &mut self.bias {
                    let s: f64 = plane.iter().map(|v| v.as_f64()).sum();
                    let g = &mut b.grad.data_mut()[co];
                    *g = *g + T::of(s);
                }
                for tap in 0..4 {
                    let (dy, dxo) = (tap / 2, tap % 2);
                    let dst = &mut gathered[(co * 4 + tap) * hw..(co * 4 + tap + 1) * hw];
                    for y in 0..h {
                        let row = (2 * y + dy) * 2 * w;
                        for xx in 0..w {
                            dst[y * w + xx] = plane[row + 2 * xx + dxo];
                        }
                    }
                }
            }
            gemm(cin, hw, taps, T::one(), x.sample(ni), Layout::row_major(hw), &gathered, Layout::transposed(hw), T::one(), self.weight.grad.data_mut(), Layout::row_major(taps));
            gemm(cin, taps, hw, T::one(), self.weight.value.data(), Layout::row_major(taps), &gathered, Layout::row_major(hw), T::zero(), dx.sample_mut(ni), Layout::row_major(hw));
        }
        Ok(dx)
    }
}

impl<T: Real> Module<T> for ConvTranspose2x2<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorRef<'_, T>)) {
        f(&join(prefix, "weight"), TensorRef::Param(&self.weight));
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), TensorRef::Param(b));
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorMut<'_, T>)) {
        f(&join(prefix, "weight"), TensorMut::Param(&mut self.weight));
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), TensorMut::Param(b));
        }
    }
}
