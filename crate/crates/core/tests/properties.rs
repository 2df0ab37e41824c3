//! Property tests against brute-force oracles.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use proptest::prelude::*;
use t2l_core::analysis::{acf, embedding_acf_correlation, spearman};
use t2l_core::downstream::{auprc, auroc, subject_split};
use t2l_core::synthgen::{covariance_on_index_grid, eval_expr, random_expr, MAX_NONPERIODIC};

fn min_eigenvalue(k: &Array2<f64>) -> f64 {
    let n = k.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| k[(i, j)]);
    SymmetricEigen::new(m).eigenvalues.min()
}

/// Sum over all positive/negative pairs, ties counted as one half.
fn auroc_pairs(s: &[f64], y: &[u8]) -> f64 {
    let mut twice = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for i in 0..s.len() {
        if y[i] == 1 {
            p += 1;
        } else {
            n += 1;
        }
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                twice += if s[i] > s[j] { 2 } else if s[i] == s[j] { 1 } else { 0 };
            }
        }
    }
    twice as f64 / 2.0 / (p * n) as f64
}

/// Evaluate precision and recall at every distinct threshold by full scan.
fn auprc_sweep(s: &[f64], y: &[u8]) -> f64 {
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let pos = y.iter().filter(|&&v| v == 1).count();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for t in thresholds {
        let tp = (0..s.len()).filter(|&i| s[i] >= t && y[i] == 1).count();
        let fp = (0..s.len()).filter(|&i| s[i] >= t && y[i] == 0).count();
        let r = tp as f64 / pos as f64;
        ap += (r - prev) * (tp as f64 / (tp + fp) as f64);
        prev = r;
    }
    ap
}

/// Rank by counting, then the definitional Pearson sums in exact integers.
fn spearman_brute(x: &[f64], y: &[f64]) -> Option<f64> {
    let rank2 = |v: &[f64]| -> Vec<i128> {
        v.iter()
            .map(|a| {
                let below = v.iter().filter(|b| *b < a).count() as i128;
                let equal = v.iter().filter(|b| *b == a).count() as i128;
                2 * below + equal + 1
            })
            .collect()
    };
    let (a, b) = (rank2(x), rank2(y));
    let n = a.len() as i128;
    let ma: i128 = a.iter().sum();
    let mb: i128 = b.iter().sum();
    // n² cov and n² var, exact.
    let cov: i128 = a.iter().zip(&b).map(|(p, q)| (n * p - ma) * (n * q - mb)).sum();
    let va: i128 = a.iter().map(|p| (n * p - ma) * (n * p - ma)).sum();
    let vb: i128 = b.iter().map(|q| (n * q - mb) * (n * q - mb)).sum();
    if va == 0 || vb == 0 {
        return None;
    }
    Some((cov / n) as f64 / (((va / n) as f64) * ((vb / n) as f64)).sqrt())
}

fn scored(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2..=max).prop_flat_map(|n| (prop::collection::vec(0u8..6, n), prop::collection::vec(0u8..=1, n)))
        .prop_map(|(s, y)| (s.into_iter().map(|v| v as f64 / 4.0).collect(), y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn auroc_matches_pair_count((s, y) in scored(10)) {
        let both = y.contains(&0) && y.contains(&1);
        prop_assume!(both);
        prop_assert_eq!(auroc(&s, &y).unwrap(), auroc_pairs(&s, &y));
    }

    #[test]
    fn auprc_matches_threshold_sweep((s, y) in scored(10)) {
        prop_assume!(y.contains(&1));
        prop_assert_eq!(auprc(&s, &y).unwrap(), auprc_sweep(&s, &y));
    }

    #[test]
    fn spearman_matches_rank_then_pearson(
        xy in (3usize..=8).prop_flat_map(|n| (prop::collection::vec(0i32..5, n), prop::collection::vec(-3i32..3, n)))
    ) {
        let x: Vec<f64> = xy.0.iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = xy.1.iter().map(|&v| v as f64 * 0.5).collect();
        match spearman_brute(&x, &y) {
            Some(r) => prop_assert_eq!(spearman(&x, &y).unwrap(), r),
            None => prop_assert!(spearman(&x, &y).is_err()),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auroc_is_invariant_under_monotone_transforms(
        (s, y) in scored(30), a in 0.1f64..5.0, b in -3.0f64..3.0
    ) {
        prop_assume!(y.contains(&0) && y.contains(&1));
        let t: Vec<f64> = s.iter().map(|v| (a * v + b).exp()).collect();
        prop_assert_eq!(auroc(&s, &y).unwrap(), auroc(&t, &y).unwrap());
    }

    #[test]
    fn composed_covariances_are_psd(seed in any::<u64>(), period in 2usize..40, n in 8usize..=64) {
        let e = random_expr(seed, period, MAX_NONPERIODIC).unwrap();
        let k = covariance_on_index_grid(&e, n).unwrap();
        let scale = k.diag().iter().cloned().fold(1.0, f64::max);
        prop_assert!(min_eigenvalue(&k) >= -1e-8 * scale, "{}", min_eigenvalue(&k));
    }

    #[test]
    fn composed_covariances_are_psd_on_irregular_grids(
        seed in any::<u64>(), period in 2usize..40, grid in prop::collection::vec(-50.0f64..50.0, 2..=64)
    ) {
        let e = random_expr(seed, period, MAX_NONPERIODIC).unwrap();
        let k = eval_expr(&e, &grid).unwrap();
        let scale = k.diag().iter().cloned().fold(1.0, f64::max);
        prop_assert!(min_eigenvalue(&k) >= -1e-8 * scale);
    }

    #[test]
    fn acf_lag_zero_is_one(x in prop::collection::vec(-1e3f64..1e3, 12..200)) {
        prop_assume!(x.iter().any(|v| *v != x[0]));
        prop_assert_eq!(acf(&x, 10).unwrap()[0], 1.0);
        prop_assert!(acf(&x, 10).unwrap().iter().all(|r| r.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn acf_correlation_ignores_sample_order(seed in any::<u64>(), rot in 1usize..9) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let series: Vec<Vec<f64>> = (0..10).map(|_| (0..40).map(|_| rng.random::<f64>()).collect()).collect();
        let emb = Array2::from_shape_fn((10, 3), |_| rng.random::<f64>());
        let a = embedding_acf_correlation(&series, emb.view(), 4).unwrap();
        let order: Vec<usize> = (0..10).map(|i| (i + rot) % 10).collect();
        let s2: Vec<Vec<f64>> = order.iter().map(|&i| series[i].clone()).collect();
        let e2 = emb.select(ndarray::Axis(0), &order);
        let b = embedding_acf_correlation(&s2, e2.view(), 4).unwrap();
        prop_assert_eq!(a.matrix, b.matrix);
    }

    #[test]
    fn subject_split_never_shares_subjects(
        subj in prop::collection::vec(0u8..12, 4..60), labels in prop::collection::vec(0u8..=1, 60),
        frac in 0.05f64..0.95, seed in any::<u64>()
    ) {
        let names: Vec<String> = subj.iter().map(|s| format!("p{s}")).collect();
        let y = &labels[..names.len()];
        let distinct: BTreeSet<&String> = names.iter().collect();
        prop_assume!(distinct.len() >= 2);
        let sp = subject_split(&names, y, frac, seed).unwrap();
        let tr: BTreeSet<&String> = sp.train.iter().map(|&i| &names[i]).collect();
        let te: BTreeSet<&String> = sp.test.iter().map(|&i| &names[i]).collect();
        prop_assert!(tr.is_disjoint(&te));
        prop_assert!(!tr.is_empty() && !te.is_empty());
        prop_assert_eq!(sp.train.len() + sp.test.len(), names.len());
    }
}
