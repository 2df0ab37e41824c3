//! Sample autocorrelation, Spearman correlation and their cross-table over
//! embedding dimensions.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Result, T2lError};

pub const DEFAULT_LAGS: usize = 10;
pub const CORRELATION_THRESHOLD: f64 = 0.3;

/// Biased sample autocorrelation for lags `0..=n_lags`.
pub fn acf(series: &[f64], n_lags: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n <= n_lags {
        return Err(T2lError::invalid(format!("series of length {n} is too short for {n_lags} lags")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(T2lError::invalid("series contains non-finite values"));
    }
    if series.iter().all(|&v| v == series[0]) {
        return Err(T2lError::UndefinedAcf("series is constant".into()));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let denom: f64 = c.iter().map(|v| v * v).sum();
    let mut out = vec![1.0];
    for lag in 1..=n_lags {
        let num: f64 = c.iter().zip(&c[lag..]).map(|(a, b)| a * b).sum();
        out.push(num / denom);
    }
    Ok(out)
}

/// Twice the 1-based mid-ranks, so tied groups stay integral.
fn doubled_midranks(x: &[f64]) -> Vec<i64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j + 2) as i64;
        }
        i = j + 1;
    }
    r
}

/// 1-based ranks with ties sharing their mean rank.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    doubled_midranks(x).into_iter().map(|r| r as f64 / 2.0).collect()
}

/// Pearson correlation of integer vectors. Sums are exact; the only
/// rounding happens in the final square root and division.
fn integer_pearson(a: &[i64], b: &[i64]) -> Option<f64> {
    let n = a.len() as i128;
    let (sa, sb) = (a.iter().map(|&v| v as i128).sum::<i128>(), b.iter().map(|&v| v as i128).sum::<i128>());
    let mut sab = 0i128;
    let mut saa = 0i128;
    let mut sbb = 0i128;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as i128, y as i128);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    let num = n * sab - sa * sb;
    let da = n * saa - sa * sa;
    let db = n * sbb - sb * sb;
    if da == 0 || db == 0 {
        return None;
    }
    Some((num as f64 / ((da as f64) * (db as f64)).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(T2lError::invalid(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(T2lError::invalid("spearman needs at least 3 points"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(T2lError::invalid("spearman inputs contain NaN"));
    }
    integer_pearson(&doubled_midranks(x), &doubled_midranks(y))
        .ok_or_else(|| T2lError::UndefinedMetric("zero rank variance".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcfCorrelationReport {
    /// `(embed_dim, n_lags)`; column `l` is lag `l + 1`. `NaN` marks a
    /// skipped degenerate cell.
    pub matrix: Array2<f64>,
    /// Signed coefficient of largest magnitude per dimension (`NaN` if the
    /// whole row was skipped).
    pub max_per_dim: Array1<f64>,
    pub count_above_threshold: usize,
    pub threshold: f64,
    pub skipped_cells: usize,
}

impl AcfCorrelationReport {
    pub fn fraction_above_threshold(&self) -> f64 {
        self.count_above_threshold as f64 / self.max_per_dim.len() as f64
    }

    pub fn write_csv(&self, matrix_path: &Path, max_path: &Path) -> Result<()> {
        let cell = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
        let mut w = csv::Writer::from_path(matrix_path)?;
        let mut header = vec!["dim".to_string()];
        header.extend((1..=self.matrix.ncols()).map(|l| format!("lag{l}")));
        w.write_record(&header)?;
        for (j, row) in self.matrix.outer_iter().enumerate() {
            let mut rec = vec![j.to_string()];
            rec.extend(row.iter().map(|&v| cell(v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| T2lError::io(matrix_path, e))?;
        let mut w = csv::Writer::from_path(max_path)?;
        w.write_record(["dim", "max_rho"])?;
        for (j, &v) in self.max_per_dim.iter().enumerate() {
            w.write_record([j.to_string(), cell(v)])?;
        }
        w.flush().map_err(|e| T2lError::io(max_path, e))
    }
}

/// Spearman correlation between `acf_l(series_i)` and `embeddings[i, j]`
/// for every dimension `j` and lag `l` in `1..=n_lags`.
pub fn embedding_acf_correlation<S: AsRef<[f64]> + Sync>(
    series: &[S],
    embeddings: ArrayView2<f64>,
    n_lags: usize,
) -> Result<AcfCorrelationReport> {
    let n = series.len();
    if n < 3 {
        return Err(T2lError::invalid(format!("need at least 3 samples, got {n}")));
    }
    if embeddings.nrows() != n {
        return Err(T2lError::shape(format!("{} embeddings for {n} series", embeddings.nrows())));
    }
    if n_lags == 0 {
        return Err(T2lError::invalid("n_lags must be at least 1"));
    }
    let acfs = series
        .par_iter()
        .map(|s| acf(s.as_ref(), n_lags))
        .collect::<Result<Vec<_>>>()?;
    let lag_ranks: Vec<Vec<i64>> = (1..=n_lags)
        .map(|l| doubled_midranks(&acfs.iter().map(|a| a[l]).collect::<Vec<_>>()))
        .collect();
    let dims = embeddings.ncols();
    let rows: Vec<Vec<f64>> = (0..dims)
        .into_par_iter()
        .map(|j| {
            let col = embeddings.index_axis(Axis(1), j).to_vec();
            let rj = doubled_midranks(&col);
            lag_ranks.iter().map(|rl| integer_pearson(&rj, rl).unwrap_or(f64::NAN)).collect()
        })
        .collect();
    let mut matrix = Array2::from_elem((dims, n_lags), f64::NAN);
    for (j, row) in rows.iter().enumerate() {
        for (l, &v) in row.iter().enumerate() {
            matrix[(j, l)] = v;
        }
    }
    let skipped_cells = matrix.iter().filter(|v| v.is_nan()).count();
    if skipped_cells > 0 {
        log::warn!("skipped {skipped_cells} degenerate (dimension, lag) cells");
    }
    let max_per_dim: Array1<f64> = matrix
        .outer_iter()
        .map(|row| {
            row.iter()
                .filter(|v| !v.is_nan())
                .fold(f64::NAN, |best, &v| if best.is_nan() || v.abs() > best.abs() { v } else { best })
        })
        .collect();
    let count_above_threshold = max_per_dim.iter().filter(|v| v.abs() > CORRELATION_THRESHOLD).count();
    Ok(AcfCorrelationReport {
        matrix,
        max_per_dim,
        count_above_threshold,
        threshold: CORRELATION_THRESHOLD,
        skipped_cells,
    })
}
