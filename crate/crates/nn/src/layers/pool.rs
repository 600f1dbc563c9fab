use crate::error::{NnError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

use super::missing_cache;

/// 2×2 max pooling with stride 2. Input dims must be even.
#[derive(Clone, Debug, Default)]
pub struct MaxPool2x2 {
    input_shape: Option<[usize; 4]>,
    /// Flat input index of the winner for every output element.
    argmax: Vec<usize>,
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        Self::default()
    }

    fn run<T: Real>(x: &Tensor<T>, mut record: Option<&mut Vec<usize>>) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.shape();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NnError::Invalid(format!("max pool needs even dims, got {h}×{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        if let Some(r) = record.as_deref_mut() {
            r.clear();
            r.reserve(n * c * oh * ow);
        }
        let data = x.data();
        let dst = out.data_mut();
        let mut o = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let i0 = base + 2 * y * w + 2 * xx;
                    let mut best = i0;
                    for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                        if data[cand] > data[best] {
                            best = cand;
                        }
                    }
                    dst[o] = data[best];
                    if let Some(r) = record.as_deref_mut() {
                        r.push(best);
                    }
                    o += 1;
                }
            }
        }
        Ok(out)
    }

    pub fn infer<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Self::run(x, None)
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut argmax = std::mem::take(&mut self.argmax);
        let y = Self::run(x, Some(&mut argmax))?;
        self.argmax = argmax;
        self.input_shape = Some(x.shape());
        Ok(y)
    }

    pub fn backward<T: Real>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.input_shape.take().ok_or_else(|| missing_cache("max_pool"))?;
        if grad.len() != self.argmax.len() {
            return Err(NnError::Shape {
                expected: vec![self.argmax.len()],
                actual: grad.shape().to_vec(),
            });
        }
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (&idx, &g) in self.argmax.iter().zip(grad.data()) {
            d[idx] = d[idx] + g;
        }
        Ok(dx)
    }
}

/// Averaging window `[start, end)` of output cell `i` when mapping `input`
/// cells onto `output` cells (floor/ceil bounds, windows may overlap).
pub(crate) fn adaptive_window(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

/// Adaptive average pooling to a fixed `bins × bins` grid.
#[derive(Clone, Debug)]
pub struct AdaptiveAvgPool2d {
    bins: usize,
    input_shape: Option<[usize; 4]>,
}

impl AdaptiveAvgPool2d {
    pub fn new(bins: usize) -> Self {
        assert!(bins > 0);
        Self { bins, input_shape: None }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn infer<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.shape();
        if h < self.bins || w < self.bins {
            return Err(NnError::Invalid(format!(
                "cannot pool {h}×{w} into {b}×{b} bins",
                b = self.bins
            )));
        }
        let b = self.bins;
        let mut out = Tensor::zeros([n, c, b, b]);
        for ni in 0..n {
            for ci in 0..c {
                let plane = x.plane(ni, ci);
                let dst = out.plane_mut(ni, ci);
                for by in 0..b {
                    let (y0, y1) = adaptive_window(by, h, b);
                    for bx in 0..b {
                        let (x0, x1) = adaptive_window(bx, w, b);
                        let mut s = 0.0;
                        for y in y0..y1 {
                            s += plane[y * w + x0..y * w + x1].iter().map(|v| v.as_f64()).sum::<f64>();
                        }
                        dst[by * b + bx] = T::of(s / ((y1 - y0) * (x1 - x0)) as f64);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input_shape = Some(x.shape());
        Ok(y)
    }

    pub fn backward<T: Real>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.input_shape.take().ok_or_else(|| missing_cache("adaptive_avg_pool"))?;
        let [n, c, h, w] = shape;
        let b = self.bins;
        grad.check_shape([n, c, b, b])?;
        let mut dx = Tensor::zeros(shape);
        for ni in 0..n {
            for ci in 0..c {
                let g = grad.plane(ni, ci);
                let dst = dx.plane_mut(ni, ci);
                for by in 0..b {
                    let (y0, y1) = adaptive_window(by, h, b);
                    for bx in 0..b {
                        let (x0, x1) = adaptive_window(bx, w, b);
                        let share = g[by * b + bx] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                        for y in y0..y1 {
                            for v in &mut dst[y * w + x0..y * w + x1] {
                                *v = *v + share;
                            }
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_windows_cover_input() {
        // 10 -> 3 bins: [0,4) [3,7) [6,10)
        assert_eq!(adaptive_window(0, 10, 3), (0, 4));
        assert_eq!(adaptive_window(1, 10, 3), (3, 7));
        assert_eq!(adaptive_window(2, 10, 3), (6, 10));
        assert_eq!(adaptive_window(5, 320, 6), (266, 320));
    }

    #[test]
    fn constant_input_pools_to_constant() {
        let x = Tensor::<f32>::full([1, 2, 10, 7], 0.25);
        for bins in [1, 2, 3, 6] {
            let y = AdaptiveAvgPool2d::new(bins).infer(&x).unwrap();
            assert_eq!(y.shape(), [1, 2, bins, bins]);
            assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        }
    }

    #[test]
    fn max_pool_routes_gradient_to_winner() {
        let x = Tensor::<f64>::from_vec([1, 1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 1.0]).unwrap();
        let mut pool = MaxPool2x2::new();
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 9.0]);
        let dx = pool.backward(&Tensor::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn avg_pool_backward_is_adjoint() {
        let x = Tensor::<f64>::from_fn([1, 1, 7, 5], |[_, _, y, xx]| ((y * 5 + xx) as f64 * 0.3).sin());
        let g = Tensor::<f64>::from_fn([1, 1, 3, 3], |[_, _, y, xx]| (y * 3 + xx) as f64 - 4.0);
        let mut pool = AdaptiveAvgPool2d::new(3);
        let y = pool.forward(&x).unwrap();
        let dx = pool.backward(&g).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
