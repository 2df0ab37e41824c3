//! Ranking metrics for binary labels (`1` = positive).

use crate::error::{Result, T2lError};

fn counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(T2lError::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(T2lError::invalid(format!("score {s} is not comparable")));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Mann–Whitney estimate of `P(score_pos > score_neg)` with ties counted ½.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = counts(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(T2lError::UndefinedMetric("auroc needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the positive rank sum keeps mid-ranks integral.
    let mut rank_sum2 = 0u64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        rank_sum2 += mid2 * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        i = j + 1;
    }
    let u2 = rank_sum2 - (pos * (pos + 1)) as u64;
    Ok(u2 as f64 / 2.0 / (pos * neg) as f64)
}

/// Average precision: `sum_k (R_k - R_{k-1}) P_k` over distinct thresholds,
/// sweeping scores from high to low.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = counts(scores, labels)?;
    if pos == 0 {
        return Err(T2lError::UndefinedMetric("auprc needs at least one positive".into()));
    }
    let idx = descending(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let t = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == t {
            if labels[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(T2lError::UndefinedMetric(_))));
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[0.9, 0.8, 0.7], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(auprc(&[0.1, 0.2, 0.9, 0.8], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert!(matches!(auprc(&[0.1, 0.2], &[0, 0]), Err(T2lError::UndefinedMetric(_))));
    }

    #[test]
    fn auprc_of_random_scores_tracks_prevalence() {
        use rand::Rng;
        let mut rng = crate::seed::rng(4);
        let n = 20_000;
        let labels: Vec<u8> = (0..n).map(|_| (rng.random::<f64>() < 0.68) as u8).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let ap = auprc(&scores, &labels).unwrap();
        assert!((ap - 0.68).abs() < 0.02, "{ap}");
    }
}
