//! Ranking metrics for scored binary outcomes.
//!
//! Ties are grouped: equal scores form one threshold step in average
//! precision and share an averaged rank in ROC AUC, so both metrics are
//! invariant to the input order of tied items.

use crate::error::{ModelError, Result};

fn validate(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(ModelError::DegenerateMetric(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(ModelError::DegenerateMetric("empty score list".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ModelError::DegenerateMetric("non-finite score".into()));
    }
    Ok(())
}

/// Average precision: the step integral of precision over recall, with one
/// step per distinct score threshold. Requires at least one positive.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    validate(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(ModelError::DegenerateMetric(
            "average precision needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        // One threshold step covers every item tied at this score.
        let mut j = i;
        let mut group_tp = 0usize;
        let mut group_fp = 0usize;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                group_tp += 1;
            } else {
                group_fp += 1;
            }
            j += 1;
        }
        tp += group_tp;
        fp += group_fp;
        let precision = tp as f64 / (tp + fp) as f64;
        let recall_step = group_tp as f64 / positives as f64;
        ap += recall_step * precision;
        i = j;
    }
    Ok(ap)
}

/// ROC AUC by averaged ranks (equivalent to the pairwise comparison count
/// with half credit for ties). Requires both classes present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    validate(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(ModelError::DegenerateMetric(
            "roc auc needs both classes".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j averaged over the tie group.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (positives * (positives + 1)) as f64 / 2.0;
    Ok(u / (positives as f64 * negatives as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_prefix_precision_example() {
        let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ap_is_one_when_positives_rank_first() {
        let ap = average_precision(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn auc_perfect_separator_is_one() {
        let auc = roc_auc(&[0.9, 0.4, 0.6, 0.1], &[true, false, true, false]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn auc_constant_scores_is_half() {
        let auc = roc_auc(&[0.5, 0.5, 0.5, 0.5], &[true, false, true, false]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(average_precision(&[], &[]).is_err());
        assert!(average_precision(&[0.5], &[false]).is_err());
        assert!(roc_auc(&[0.5, 0.6], &[true, true]).is_err());
        assert!(roc_auc(&[f64::NAN, 0.5], &[true, false]).is_err());
    }

    #[test]
    fn metrics_are_order_invariant_under_ties() {
        let a = average_precision(&[0.5, 0.5, 0.2], &[true, false, true]).unwrap();
        let b = average_precision(&[0.5, 0.5, 0.2], &[false, true, true]).unwrap();
        assert_eq!(a, b);
        let a = roc_auc(&[0.5, 0.5, 0.2], &[true, false, true]).unwrap();
        let b = roc_auc(&[0.5, 0.5, 0.2], &[false, true, true]).unwrap();
        assert_eq!(a, b);
    }
}
