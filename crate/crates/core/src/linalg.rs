//! Small dense kernels: thin Householder QR and LU with complete pivoting.
//!
//! Sizes here are tiny (d ≤ 127, k ≤ 15) so none of this goes through BLAS.

use ndarray::{Array1, Array2, ArrayView2};

/// Thin QR of a `rows × cols` matrix (`rows ≥ cols`) by Householder reflections.
///
/// Returns `(q, r)` with `q` of shape `rows × cols` having orthonormal columns
/// and `r` upper triangular `cols × cols`. The diagonal of `r` may carry either
/// sign; callers that need `|R_ii|` take the absolute value.
pub fn qr_thin(a: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (m, k) = a.dim();
    assert!(m >= k, "qr_thin needs rows >= cols");
    let mut work = a.to_owned();
    let mut vs: Vec<Array1<f64>> = Vec::with_capacity(k);

    for j in 0..k {
        let mut v = Array1::zeros(m - j);
        for i in j..m {
            v[i - j] = work[[i, j]];
        }
        let alpha = v.dot(&v).sqrt();
        if alpha == 0.0 {
            vs.push(Array1::zeros(m - j));
            continue;
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm = v.dot(&v).sqrt();
        v /= vnorm;
        for c in j..k {
            let mut s = 0.0;
            for i in j..m {
                s += v[i - j] * work[[i, c]];
            }
            for i in j..m {
                work[[i, c]] -= 2.0 * v[i - j] * s;
            }
        }
        vs.push(v);
    }

    let mut r = Array2::zeros((k, k));
    for i in 0..k {
        for j in i..k {
            r[[i, j]] = work[[i, j]];
        }
    }

    // Accumulate Q = H_0 H_1 ... H_{k-1} applied to the first k identity columns.
    let mut q = Array2::zeros((m, k));
    for j in 0..k {
        q[[j, j]] = 1.0;
    }
    for j in (0..k).rev() {
        let v = &vs[j];
        for c in 0..k {
            let mut s = 0.0;
            for i in j..m {
                s += v[i - j] * q[[i, c]];
            }
            if s != 0.0 {
                for i in j..m {
                    q[[i, c]] -= 2.0 * v[i - j] * s;
                }
            }
        }
    }
    (q, r)
}

/// LU factorization with complete (row and column) pivoting: `P A Q = L U`.
#[derive(Debug, Clone)]
pub struct LuComplete {
    lu: Array2<f64>,
    row_perm: Vec<usize>,
    col_perm: Vec<usize>,
    min_pivot: f64,
}

impl LuComplete {
    pub fn new(a: ArrayView2<f64>) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU needs a square matrix");
        let mut lu = a.to_owned();
        let mut row_perm: Vec<usize> = (0..n).collect();
        let mut col_perm: Vec<usize> = (0..n).collect();
        let mut min_pivot = f64::INFINITY;

        for k in 0..n {
            let (mut pi, mut pj, mut best) = (k, k, -1.0);
            for i in k..n {
                for j in k..n {
                    let v = lu[[i, j]].abs();
                    if v > best {
                        best = v;
                        pi = i;
                        pj = j;
                    }
                }
            }
            if pi != k {
                for j in 0..n {
                    lu.swap([k, j], [pi, j]);
                }
                row_perm.swap(k, pi);
            }
            if pj != k {
                for i in 0..n {
                    lu.swap([i, k], [i, pj]);
                }
                col_perm.swap(k, pj);
            }
            let pivot = lu[[k, k]];
            min_pivot = min_pivot.min(pivot.abs());
            if pivot == 0.0 {
                continue;
            }
            for i in (k + 1)..n {
                let f = lu[[i, k]] / pivot;
                lu[[i, k]] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        lu[[i, j]] -= f * lu[[k, j]];
                    }
                }
            }
        }
        Self {
            lu,
            row_perm,
            col_perm,
            min_pivot,
        }
    }

    /// Smallest pivot magnitude met during elimination.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// Largest pivot magnitude, used to judge the relative size of `min_pivot`.
    pub fn max_pivot(&self) -> f64 {
        (0..self.lu.nrows())
            .map(|i| self.lu[[i, i]].abs())
            .fold(0.0, f64::max)
    }

    /// Solves `A X = B` column by column.
    pub fn solve(&self, b: ArrayView2<f64>) -> Array2<f64> {
        let n = self.lu.nrows();
        let mut out = Array2::zeros(b.raw_dim());
        let mut y = vec![0.0; n];
        for c in 0..b.ncols() {
            for i in 0..n {
                y[i] = b[[self.row_perm[i], c]];
            }
            for i in 0..n {
                let mut s = y[i];
                for j in 0..i {
                    s -= self.lu[[i, j]] * y[j];
                }
                y[i] = s;
            }
            for i in (0..n).rev() {
                let mut s = y[i];
                for j in (i + 1)..n {
                    s -= self.lu[[i, j]] * y[j];
                }
                y[i] = s / self.lu[[i, i]];
            }
            for i in 0..n {
                out[[self.col_perm[i], c]] = y[i];
            }
        }
        out
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let col = ndarray::ArrayView2::from_shape((b.len(), 1), b).expect("column view");
        self.solve(col).into_raw_vec_and_offset().0
    }
}

pub fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
