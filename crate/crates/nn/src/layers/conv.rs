use rand::Rng;

use crate::error::{NnError, Result};
use crate::gemm::{gemm, Layout};
use crate::init::kaiming_normal;
use crate::module::{join, Module, Param, TensorMut, TensorRef};
use crate::real::Real;
use crate::tensor::Tensor;

use super::missing_cache;

/// Upper bound on the im2col scratch buffer, in elements.
const COL_BUDGET: usize = 1 << 22;

/// Stride-1 "same" convolution with an odd square kernel.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let shape = [out_channels, in_channels, kernel, kernel];
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: Param::new(kaiming_normal(shape, rng), true),
            bias: bias.then(|| Param::new(Tensor::zeros([out_channels, 1, 1, 1]), false)),
            input: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Output rows processed per im2col tile.
    fn tile_rows(&self, h: usize, w: usize) -> usize {
        (COL_BUDGET / (self.col_rows() * w).max(1)).clamp(1, h)
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

    /// Fills `col` (`K_rows × rows·w`) for output rows `r0..r0+rows`.
    fn im2col(cin: usize, k: usize, img: &[T], h: usize, w: usize, r0: usize, rows: usize, col: &mut [T]) {
        let pad = (k / 2) as isize;
        let n = rows * w;
        for c in 0..cin {
            let plane = &img[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut col[row * n..(row + 1) * n];
                    for oy in 0..rows {
                        let iy = (r0 + oy) as isize + ky as isize - pad;
                        let drow = &mut dst[oy * w..(oy + 1) * w];
                        if iy < 0 || iy >= h as isize {
                            drow.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let shift = kx as isize - pad;
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = ox as isize + shift;
                            *d = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adds `col` back into the image gradient (transpose of [`Self::im2col`]).
    fn col2im(cin: usize, k: usize, col: &[T], h: usize, w: usize, r0: usize, rows: usize, img: &mut [T]) {
        let pad = (k / 2) as isize;
        let n = rows * w;
        for c in 0..cin {
            let plane = &mut img[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &col[row * n..(row + 1) * n];
                    for oy in 0..rows {
                        let iy = (r0 + oy) as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let shift = kx as isize - pad;
                        for (ox, &s) in src[oy * w..(oy + 1) * w].iter().enumerate() {
                            let ix = ox as isize + shift;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] = drow[ix as usize] + s;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let [n, _, h, w] = x.shape();
        let hw = h * w;
        let cout = self.out_channels;
        let kr = self.col_rows();
        let mut out = Tensor::zeros([n, cout, h, w]);
        let weight = self.weight.value.data();
        let tile = self.tile_rows(h, w);
        let mut col = if self.kernel == 1 {
            Vec::new()
        } else {
            vec![T::zero(); kr * tile * w]
        };
        for ni in 0..n {
            let img = x.sample(ni);
            let dst = out.sample_mut(ni);
            if self.kernel == 1 {
                gemm(cout, kr, hw, T::one(), weight, Layout::row_major(kr), img, Layout::row_major(hw), T::zero(), dst, Layout::row_major(hw));
            } else {
                let mut r0 = 0;
                while r0 < h {
                    let rows = tile.min(h - r0);
                    let cols = rows * w;
                    Self::im2col(self.in_channels, self.kernel, img, h, w, r0, rows, &mut col);
                    gemm(cout, kr, cols, T::one(), weight, Layout::row_major(kr), &col, Layout::row_major(cols), T::zero(), &mut dst[r0 * w..], Layout::row_major(hw));
                    r0 += rows;
                }
            }
            if let Some(b) = &self.bias {
                for (co, &bv) in b.value.data().iter().enumerate() {
                    dst[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v = *v + bv);
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

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_cache("conv2d"))?;
        let [n, _, h, w] = x.shape();
        grad.check_shape([n, self.out_channels, h, w])?;
        let hw = h * w;
        let cout = self.out_channels;
        let kr = self.col_rows();
        let mut dx = Tensor::zeros(x.shape());
        let tile = self.tile_rows(h, w);
        let (cin, k) = (self.in_channels, self.kernel);
        let mut col = vec![T::zero(); if self.kernel == 1 { 0 } else { kr * tile * w }];
        let mut dcol = vec![T::zero(); if self.kernel == 1 { 0 } else { kr * tile * w }];

        for ni in 0..n {
            let img = x.sample(ni);
            let g = grad.sample(ni);
            if let Some(b) = &mut self.bias {
                let bg = b.grad.data_mut();
                for co in 0..cout {
                    let s: f64 = g[co * hw..(co + 1) * hw].iter().map(|v| v.as_f64()).sum();
                    bg[co] = bg[co] + T::of(s);
                }
            }
            let weight = self.weight.value.data();
            let wgrad = self.weight.grad.data_mut();
            let dimg = dx.sample_mut(ni);
            if self.kernel == 1 {
                // dW += g · x^T ; dx = W^T · g
                gemm(cout, hw, kr, T::one(), g, Layout::row_major(hw), img, Layout::transposed(hw), T::one(), wgrad, Layout::row_major(kr));
                gemm(kr, cout, hw, T::one(), weight, Layout::transposed(kr), g, Layout::row_major(hw), T::zero(), dimg, Layout::row_major(hw));
            } else {
                let mut r0 = 0;
                while r0 < h {
                    let rows = tile.min(h - r0);
                    let cols = rows * w;
                    Self::im2col(self.in_channels, self.kernel, img, h, w, r0, rows, &mut col);
                    let gt = &g[r0 * w..];
                    gemm(cout, cols, kr, T::one(), gt, Layout::row_major(hw), &col, Layout::transposed(cols), T::one(), wgrad, Layout::row_major(kr));
                    gemm(kr, cout, cols, T::one(), weight, Layout::transposed(kr), gt, Layout::row_major(hw), T::zero(), &mut dcol, Layout::row_major(cols));
                    Self::col2im(cin, k, &dcol, h, w, r0, rows, dimg);
                    r0 += rows;
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
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
