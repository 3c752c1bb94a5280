//! Compressed sparse row matrices and Jacobi-preconditioned conjugate gradients.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("conjugate gradients did not reach tolerance {tol:e} in {iterations} iterations (residual {residual:e})")]
    Diverged {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
    #[error("non-finite value encountered in linear solve")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Assemble from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(
                r < n && c < n,
                "triplet ({r}, {c}) out of range for n = {n}"
            );
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v).sum())
            .collect()
    }

    /// `y = A x`
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *yi = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `α D + β A` for a diagonal `D` (same sparsity plus the diagonal).
    pub fn scaled_plus_diagonal(&self, beta: f64, diag: &[f64], alpha: f64) -> CsrMatrix {
        let mut t = Vec::with_capacity(self.nnz() + self.n);
        for (i, d) in diag.iter().enumerate().take(self.n) {
            t.push((i, i, alpha * d));
            for (j, v) in self.row(i) {
                t.push((i, j, beta * v));
            }
        }
        CsrMatrix::from_triplets(self.n, t)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Solve `A x = b` for symmetric positive definite `A` with diagonal
/// preconditioning. `x` holds the initial guess on entry. Convergence is
/// declared when `sqrt(rᵀ D⁻¹ r) ≤ tol · sqrt(bᵀ D⁻¹ b)`.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgStats, SolveError> {
    let n = a.n();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut r = a.mul_vec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let b_norm = b
        .iter()
        .zip(&inv_diag)
        .map(|(b, d)| b * b * d)
        .sum::<f64>()
        .sqrt();
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    let mut rz = dot(&r, &z);
    if !rz.is_finite() {
        return Err(SolveError::NonFinite);
    }
    if rz.max(0.0).sqrt() <= tol * scale {
        return Ok(CgStats {
            iterations: 0,
            residual: rz.max(0.0).sqrt() / scale,
        });
    }
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(SolveError::NonFinite);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        if !rz_new.is_finite() {
            return Err(SolveError::NonFinite);
        }
        let res = rz_new.max(0.0).sqrt() / scale;
        if res <= tol {
            return Ok(CgStats {
                iterations: it,
                residual: res,
            });
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolveError::Diverged {
        iterations: max_iter,
        residual: rz.max(0.0).sqrt() / scale,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn laplace_1d(n: usize, shift: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_triplets(
            2,
            vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, -1.0), (0, 1, -1.0)],
        );
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.nnz(), 3);
        assert!(a.is_symmetric(0.0));
        assert_eq!(a.row_sums(), vec![2.0, -1.0]);
    }

    #[test]
    fn cg_solves_tridiagonal() {
        let a = laplace_1d(50, 0.1);
        let exact: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul_vec(&exact);
        let mut x = vec![0.0; 50];
        let stats = conjugate_gradient(&a, &b, &mut x, 1e-12, 500).unwrap();
        assert!(stats.iterations <= 50);
        for (u, v) in x.iter().zip(&exact) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn cg_reports_divergence() {
        let a = laplace_1d(200, 0.0);
        let b = vec![1.0; 200];
        let mut x = vec![0.0; 200];
        let err = conjugate_gradient(&a, &b, &mut x, 1e-14, 3).unwrap_err();
        assert!(matches!(err, SolveError::Diverged { iterations: 3, .. }));
    }

    #[test]
    fn zero_rhs_returns_immediately() {
        let a = laplace_1d(5, 1.0);
        let mut x = vec![0.0; 5];
        let s = conjugate_gradient(&a, &[0.0; 5], &mut x, 1e-12, 10).unwrap();
        assert_eq!(s.iterations, 0);
    }

    proptest! {
        #[test]
        fn scaled_plus_diagonal_matches_dense(shift in 0.0f64..2.0, alpha in 0.1f64..3.0, beta in 0.1f64..3.0) {
            let a = laplace_1d(6, shift);
            let d: Vec<f64> = (0..6).map(|i| 1.0 + i as f64).collect();
            let s = a.scaled_plus_diagonal(beta, &d, alpha);
            for (i, di) in d.iter().enumerate() {
                for j in 0..6 {
                    let expected = beta * a.get(i, j) + if i == j { alpha * di } else { 0.0 };
                    prop_assert!((s.get(i, j) - expected).abs() < 1e-14);
                }
            }
        }
    }
}
