//! Bounds-checked wrapper around the strided GEMM kernels.

use crate::real::Real;

/// Row/column strides of a matrix view, in elements.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub row: usize,
    pub col: usize,
}

impl Layout {
    /// Row-major with the given leading dimension.
    pub const fn row_major(ld: usize) -> Self {
        Self { row: ld, col: 1 }
    }

    /// Transposed view of a row-major matrix with leading dimension `ld`.
    pub const fn transposed(ld: usize) -> Self {
        Self { row: 1, col: ld }
    }

    fn max_index(self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.row + (cols - 1) * self.col
        }
    }
}

/// `c = alpha * a · b + beta * c` where `a` is `m×k`, `b` is `k×n`, `c` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    la: Layout,
    b: &[T],
    lb: Layout,
    beta: T,
    c: &mut [T],
    lc: Layout,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(la.max_index(m, k) < a.len(), "gemm: A out of bounds");
        assert!(lb.max_index(k, n) < b.len(), "gemm: B out of bounds");
    }
    assert!(lc.max_index(m, n) < c.len(), "gemm: C out of bounds");
    // SAFETY: every index touched by the kernel was bounds-checked above and
    // `c` is a unique borrow, so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            la.row as isize,
            la.col as isize,
            b.as_ptr(),
            lb.row as isize,
            lb.col as isize,
            beta,
            c.as_mut_ptr(),
            lc.row as isize,
            lc.col as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_product_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut c = vec![1.0; m * n];
        gemm(m, k, n, 2.0, &a, Layout::row_major(k), &b, Layout::row_major(n), 0.5, &mut c, Layout::row_major(n));
        for i in 0..m {
            for j in 0..n {
                let dot: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                assert!((c[i * n + j] - (2.0 * dot + 0.5)).abs() < 1e-12);
            }
        }
        // a^T stored as k×m row-major
        let at: Vec<f64> = (0..k * m).map(|idx| a[(idx % m) * k + idx / m]).collect();
        let mut c2 = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &at, Layout::transposed(m), &b, Layout::row_major(n), 0.0, &mut c2, Layout::row_major(n));
        for i in 0..m {
            for j in 0..n {
                let dot: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                assert!((c2[i * n + j] - dot).abs() < 1e-12);
            }
        }
    }
}
