//! Dense kernels shared by the graph ops and the ridge solver.

use crate::error::{Error, Result};

/// Row-major matrix view: `rows x cols` with explicit strides.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// View with arbitrary strides; overlapping rows are allowed.
    pub fn strided(data: &'a [f64], rows: usize, cols: usize, row_stride: usize, col_stride: usize) -> Self {
        debug_assert!(rows == 0 || cols == 0 || data.len() > (rows - 1) * row_stride + (cols - 1) * col_stride);
        Self {
            data,
            rows,
            cols,
            row_stride: row_stride as isize,
            col_stride: col_stride as isize,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `c = beta * c + a * b` where `c` is row-major `a.rows x b.cols`.
pub fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the views were built from slices long enough for their
    // declared extents and strides; `c` holds m*n contiguous elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dot product with a fixed eight-lane accumulation order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factorizes the row-major `n x n` matrix `a` (only the lower triangle is read).
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::shape("cholesky", format!("{} values for n={n}", a.len())));
        }
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let row_j = &l[j * n..j * n + j];
            let d = a[j * n + j] - dot(row_j, row_j);
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Singular(format!(
                    "matrix is not positive definite (pivot {j} = {d:e})"
                )));
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let (upper, lower) = l.split_at_mut(i * n);
                let row_j = &upper[j * n..j * n + j];
                let row_i = &mut lower[..n];
                let s = a[i * n + j] - dot(&row_i[..j], row_j);
                row_i[j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A X = B` in place for a row-major `n x m` right-hand side.
    pub fn solve_in_place(&self, b: &mut [f64], m: usize) {
        let n = self.n;
        assert_eq!(b.len(), n * m);
        let l = &self.l;
        // forward: L Y = B
        for i in 0..n {
            for k in 0..i {
                let lik = l[i * n + k];
                if lik != 0.0 {
                    for c in 0..m {
                        b[i * m + c] -= lik * b[k * m + c];
                    }
                }
            }
            let d = l[i * n + i];
            for c in 0..m {
                b[i * m + c] /= d;
            }
        }
        // backward: L^T X = Y
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let lki = l[k * n + i];
                if lki != 0.0 {
                    for c in 0..m {
                        b[i * m + c] -= lki * b[k * m + c];
                    }
                }
            }
            let d = l[i * n + i];
            for c in 0..m {
                b[i * m + c] /= d;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_including_transposed_views() {
        let a: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect(); // 3x4
        let b: Vec<f64> = (0..8).map(|v| (v as f64).sin()).collect(); // 4x2
        let mut c = vec![0.0; 6];
        gemm(MatRef::new(&a, 3, 4), MatRef::new(&b, 4, 2), 0.0, &mut c);
        let want = naive(&a, &b, 3, 4, 2);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
        // a^T a (4x4)
        let mut g = vec![0.0; 16];
        gemm(MatRef::new(&a, 3, 4).t(), MatRef::new(&a, 3, 4), 0.0, &mut g);
        for i in 0..4 {
            for j in 0..4 {
                let s: f64 = (0..3).map(|r| a[r * 4 + i] * a[r * 4 + j]).sum();
                assert!((g[i * 4 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = [4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0];
        let ch = Cholesky::factor(&a, 3).unwrap();
        let x_true = [1.0, -2.0, 0.5, 3.0, 0.0, 1.0];
        let mut b = naive(&a, &x_true, 3, 3, 2);
        ch.solve_in_place(&mut b, 2);
        for (x, y) in b.iter().zip(&x_true) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = [1.0, 2.0, 2.0, 1.0];
        assert!(matches!(Cholesky::factor(&a, 2), Err(Error::Singular(_))));
    }

    #[test]
    fn dot_handles_remainders() {
        let a: Vec<f64> = (0..19).map(|v| v as f64).collect();
        assert_eq!(dot(&a, &a), (0..19).map(|v| (v * v) as f64).sum::<f64>());
    }

    proptest! {
        #[test]
        fn cholesky_solve_has_small_residual(
            n in 1usize..12,
            seed in proptest::collection::vec(-1.0f64..1.0, 144 + 24),
        ) {
            // A = M M^T + I is positive definite for any M
            let m = &seed[..n * n];
            let mt: Vec<f64> = (0..n * n).map(|k| m[(k % n) * n + k / n]).collect();
            let mut a = naive(m, &mt, n, n, n);
            for i in 0..n {
                a[i * n + i] += 1.0;
            }
            let rhs: Vec<f64> = seed[144..144 + 2 * n].to_vec();
            let mut x = rhs.clone();
            Cholesky::factor(&a, n).unwrap().solve_in_place(&mut x, 2);
            let ax = naive(&a, &x, n, n, 2);
            for (got, want) in ax.iter().zip(&rhs) {
                prop_assert!((got - want).abs() < 1e-9);
            }
        }
    }
}
