//! Drawing series from a zero-mean Gaussian process.

use faer::{Mat, Side};
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use super::expr::{covariance_on_index_grid, KernelExpr};
use crate::error::{Result, T2lError};
use crate::seed;

/// Relative jitter schedule, scaled by `trace(K) / n`.
pub const JITTER_START: f64 = 1e-6;
pub const JITTER_MAX: f64 = 1e-2;

/// Largest rank attempted by the pivoted factorization before switching to a
/// dense factorization.
pub const LOW_RANK_CAP: usize = 192;

/// How a covariance matrix ended up factorized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factorization {
    /// Pivoted Cholesky stopped at `rank` with every remaining Schur
    /// diagonal below `JITTER_START * trace / n`.
    LowRank { rank: usize },
    /// Dense Cholesky of `K + jitter * trace / n * I`.
    Dense { jitter: f64 },
}

/// A factor `F` with `F Fᵀ ≈ K`, stored column-wise in original row order.
pub struct CovarianceFactor {
    n: usize,
    columns: Vec<Vec<f64>>,
    pub kind: Factorization,
}

impl CovarianceFactor {
    pub fn rank(&self) -> usize {
        self.columns.len()
    }

    /// `F z` for a standard-normal vector of length `rank()`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.columns.len());
        let mut x = vec![0.0; self.n];
        for (col, &zk) in self.columns.iter().zip(z) {
            for (xi, &ci) in x.iter_mut().zip(col) {
                *xi += ci * zk;
            }
        }
        x
    }
}

/// Diagonally pivoted Cholesky that stops once the largest remaining
/// diagonal drops to `tol`. Returns `None` if `cap` columns are not enough.
///
/// Columns of the factor are linear combinations of columns of `k`, so any
/// linear structure shared by every column (exact periodicity, constancy) is
/// inherited by samples drawn through the factor.
fn pivoted_cholesky(k: &Array2<f64>, tol: f64, cap: usize) -> Option<Vec<Vec<f64>>> {
    let n = k.nrows();
    let mut diag: Vec<f64> = (0..n).map(|i| k[(i, i)]).collect();
    let mut done = vec![false; n];
    let mut cols: Vec<Vec<f64>> = Vec::new();
    loop {
        let mut p = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            if !done[i] && diag[i] > best {
                best = diag[i];
                p = i;
            }
        }
        if p == usize::MAX || best <= tol {
            return Some(cols);
        }
        if cols.len() == cap {
            return None;
        }
        let pivot = best.sqrt();
        let mut col: Vec<f64> = k.column(p).to_vec();
        for prev in &cols {
            let w = prev[p];
            if w != 0.0 {
                for (c, &v) in col.iter_mut().zip(prev) {
                    *c -= v * w;
                }
            }
        }
        for (i, c) in col.iter_mut().enumerate() {
            if done[i] {
                *c = 0.0;
            } else {
                *c /= pivot;
            }
        }
        col[p] = pivot;
        for i in 0..n {
            if !done[i] {
                diag[i] -= col[i] * col[i];
            }
        }
        done[p] = true;
        diag[p] = 0.0;
        cols.push(col);
    }
}

fn dense_cholesky(k: &Array2<f64>, scale: f64) -> Result<(Vec<Vec<f64>>, f64)> {
    let n = k.nrows();
    let mut eps = JITTER_START;
    while eps <= JITTER_MAX * (1.0 + 1e-12) {
        let jitter = eps * scale;
        let m = Mat::<f64>::from_fn(n, n, |i, j| if i == j { k[(i, j)] + jitter } else { k[(i, j)] });
        if let Ok(llt) = m.llt(Side::Lower) {
            let l = llt.L();
            let cols = (0..n)
                .map(|j| (0..n).map(|i| if i >= j { l[(i, j)] } else { 0.0 }).collect())
                .collect();
            return Ok((cols, eps));
        }
        eps *= 2.0;
    }
    Err(T2lError::NumericalInstability(format!(
        "Cholesky factorization failed with relative jitter up to {JITTER_MAX:e}"
    )))
}

/// Factorize a covariance matrix: low-rank pivoted first, dense jittered
/// Cholesky (doubling the jitter on failure) as the fallback.
pub fn factorize(k: &Array2<f64>) -> Result<CovarianceFactor> {
    let n = k.nrows();
    if n == 0 || k.ncols() != n {
        return Err(T2lError::shape(format!("covariance must be square and non-empty, got {:?}", k.dim())));
    }
    let scale = k.diag().sum() / n as f64;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(T2lError::NumericalInstability(format!(
            "covariance has non-positive or non-finite mean diagonal {scale}"
        )));
    }
    if let Some(cols) = pivoted_cholesky(k, JITTER_START * scale, LOW_RANK_CAP.min(n)) {
        let rank = cols.len();
        return Ok(CovarianceFactor {
            n,
            columns: cols,
            kind: Factorization::LowRank { rank },
        });
    }
    let (columns, jitter) = dense_cholesky(k, scale)?;
    Ok(CovarianceFactor {
        n,
        columns,
        kind: Factorization::Dense { jitter },
    })
}

/// One draw from `N(0, K)` with `K` the Gram matrix of `expr` on `0..length`.
/// Deterministic in `(expr, length, seed)`.
pub fn sample_gp(expr: &KernelExpr, length: usize, seed: u64) -> Result<Vec<f64>> {
    if length == 0 {
        return Err(T2lError::invalid("length must be at least 1"));
    }
    let k = covariance_on_index_grid(expr, length)?;
    let factor = factorize(&k)?;
    let mut rng = seed::rng(seed);
    let z: Vec<f64> = (0..factor.rank()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x = factor.apply(&z);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(T2lError::NumericalInstability("sample contains non-finite values".into()));
    }
    Ok(x)
}
