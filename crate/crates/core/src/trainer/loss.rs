use ndarray::{Array2, ArrayView2};

use crate::error::{Result, T2lError};
use crate::real::Real;

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= classes) {
        Some(y) => Err(T2lError::invalid(format!("label {y} outside 0..{classes}"))),
        None => Ok(()),
    }
}

/// Mean negative log-softmax of the true class; `logits` is `(N, classes)`.
pub fn cross_entropy<T: Real>(logits: ArrayView2<T>, labels: &[usize]) -> Result<f64> {
    Ok(softmax_cross_entropy(logits.t(), labels)?.0)
}

/// Loss and its gradient for column-per-sample logits `(classes, N)`.
pub fn softmax_cross_entropy<T: Real>(logits: ArrayView2<T>, labels: &[usize]) -> Result<(f64, Array2<T>)> {
    let (classes, n) = logits.dim();
    if n == 0 || n != labels.len() {
        return Err(T2lError::invalid(format!("{n} logit columns for {} labels", labels.len())));
    }
    check_labels(labels, classes)?;
    let mut grad = Array2::zeros((classes, n));
    let mut total = 0.0;
    for (j, &y) in labels.iter().enumerate() {
        let col = logits.column(j);
        let max = col.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let sum: f64 = col.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - col[y].as_f64();
        for c in 0..classes {
            let p = (col[c].as_f64() - lse).exp();
            let target = if c == y { 1.0 } else { 0.0 };
            grad[[c, j]] = T::of((p - target) / n as f64);
        }
    }
    Ok((total / n as f64, grad))
}

pub fn argmax<T: Real>(v: impl IntoIterator<Item = T>) -> usize {
    let mut best = (0, T::neg_infinity());
    for (i, x) in v.into_iter().enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn examples() {
        let eq = Array2::<f64>::zeros((1, 6));
        assert!((cross_entropy(eq.view(), &[4]).unwrap() - 6f64.ln()).abs() < 1e-12);
        let sat = array![[100.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
        assert!(cross_entropy(sat.view(), &[0]).unwrap() < 1e-6);
        let two = array![[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]];
        let a = cross_entropy(two.slice(ndarray::s![0..1, ..]), &[2]).unwrap();
        let b = cross_entropy(two.slice(ndarray::s![1..2, ..]), &[0]).unwrap();
        assert!((cross_entropy(two.view(), &[2, 0]).unwrap() - (a + b) / 2.0).abs() < 1e-12);
        assert!(cross_entropy(two.view(), &[3, 0]).is_err());
        let huge = array![[1e4f32, -1e4]];
        assert!(cross_entropy(huge.view(), &[1]).unwrap().is_finite());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = array![[0.3, -1.2], [2.0, 0.1], [-0.5, 0.7]];
        let labels = [1, 2];
        let (_, g) = softmax_cross_entropy(logits.view(), &labels).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut p = logits.clone();
                p[[i, j]] += 1e-6;
                let mut m = logits.clone();
                m[[i, j]] -= 1e-6;
                let num = (softmax_cross_entropy(p.view(), &labels).unwrap().0
                    - softmax_cross_entropy(m.view(), &labels).unwrap().0)
                    / 2e-6;
                assert!((num - g[[i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn relabeling_invariance() {
        let logits = array![[0.3, -1.2, 0.9], [2.0, 0.1, -0.4]];
        let perm = [2, 0, 1];
        let mut permuted = logits.clone();
        for (src, &dst) in perm.iter().enumerate() {
            permuted.column_mut(dst).assign(&logits.column(src));
        }
        let labels = [0, 2];
        let relabeled: Vec<usize> = labels.iter().map(|&y| perm[y]).collect();
        let a = cross_entropy(logits.view(), &labels).unwrap();
        let b = cross_entropy(permuted.view(), &relabeled).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax([1.0, 3.0, 3.0, 2.0]), 1);
    }
}
