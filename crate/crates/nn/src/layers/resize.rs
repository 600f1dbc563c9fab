use crate::error::{NnError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

use super::missing_cache;

/// Source taps for one output coordinate: `(i0, i1, w0, w1)`.
pub(crate) type Tap = (usize, usize, f64, f64);

/// Half-pixel-centred bilinear taps (`align_corners = false`), clamped at the
/// borders.
pub(crate) fn bilinear_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = src - i0 as f64;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

/// Bilinear resampling of every plane to a fixed output size.
#[derive(Clone, Debug)]
pub struct BilinearResize {
    out_h: usize,
    out_w: usize,
    input_shape: Option<[usize; 4]>,
}

impl BilinearResize {
    pub fn new(out_h: usize, out_w: usize) -> Self {
        Self {
            out_h,
            out_w,
            input_shape: None,
        }
    }

    /// Resizes to `(out_h, out_w)` without caching anything.
    pub fn apply<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.shape();
        if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
            return Err(NnError::Invalid("bilinear resize with a zero dimension".into()));
        }
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let mut out = Tensor::zeros([n, c, out_h, out_w]);
        for ni in 0..n {
            for ci in 0..c {
                let src = x.plane(ni, ci);
                let dst = out.plane_mut(ni, ci);
                for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                    let r0 = &src[y0 * w..(y0 + 1) * w];
                    let r1 = &src[y1 * w..(y1 + 1) * w];
                    for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                        let top = r0[x0].as_f64() * wx0 + r0[x1].as_f64() * wx1;
                        let bot = r1[x0].as_f64() * wx0 + r1[x1].as_f64() * wx1;
                        dst[oy * out_w + ox] = T::of(top * wy0 + bot * wy1);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Adjoint of [`BilinearResize::apply`] for an input of shape `input_shape`.
    pub fn apply_adjoint<T: Real>(grad: &Tensor<T>, input_shape: [usize; 4]) -> Result<Tensor<T>> {
        let [n, c, h, w] = input_shape;
        let [gn, gc, out_h, out_w] = grad.shape();
        if gn != n || gc != c {
            return Err(NnError::Shape {
                expected: vec![n, c, out_h, out_w],
                actual: grad.shape().to_vec(),
            });
        }
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let mut dx = Tensor::zeros(input_shape);
        let mut acc = vec![0.0f64; h * w];
        for ni in 0..n {
            for ci in 0..c {
                acc.fill(0.0);
                let g = grad.plane(ni, ci);
                for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                        let v = g[oy * out_w + ox].as_f64();
                        acc[y0 * w + x0] += v * wy0 * wx0;
                        acc[y0 * w + x1] += v * wy0 * wx1;
                        acc[y1 * w + x0] += v * wy1 * wx0;
                        acc[y1 * w + x1] += v * wy1 * wx1;
                    }
                }
                for (d, &a) in dx.plane_mut(ni, ci).iter_mut().zip(&acc) {
                    *d = T::of(a);
                }
            }
        }
        Ok(dx)
    }

    pub fn infer<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Self::apply(x, self.out_h, self.out_w)
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input_shape = Some(x.shape());
        Ok(y)
    }

    pub fn backward<T: Real>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.input_shape.take().ok_or_else(|| missing_cache("bilinear_resize"))?;
        Self::apply_adjoint(grad, shape)
    }
}
