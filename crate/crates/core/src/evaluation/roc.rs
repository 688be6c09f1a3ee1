use crate::error::{Result, SpadeError};

/// Area under the ROC curve as the Mann-Whitney statistic:
/// `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)` over all positive/negative pairs.
///
/// Ties are grouped on exact equality and the pair count is kept as an exact
/// integer (twice the U statistic), so the only rounding is the final division.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(SpadeError::Parameter(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(SpadeError::Parameter("scores contain NaN".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count() as u128;
    let negatives = labels.len() as u128 - positives;
    if positives == 0 || negatives == 0 {
        return Err(SpadeError::UndefinedMetric(
            "ROCAUC needs both positive and negative samples".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let value = scores[order[i]];
        let (mut pos, mut neg) = (0u128, 0u128);
        while i < order.len() && scores[order[i]] == value {
            if labels[order[i]] {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        twice_u += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
    }
    Ok(twice_u as f64 / (2 * positives * negatives) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_of_four_pairs() {
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn separated_and_tied() {
        assert_eq!(roc_auc(&[0.0, 1.0, 2.0], &[false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[5.0; 6], &[false, true, true, false, true, false]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[2.0, 1.0], &[false, true]).unwrap(), 0.0);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            roc_auc(&[1.0, 2.0], &[true, true]),
            Err(SpadeError::UndefinedMetric(_))
        ));
        assert!(matches!(roc_auc(&[], &[]), Err(SpadeError::UndefinedMetric(_))));
        assert!(roc_auc(&[1.0], &[true, false]).is_err());
    }

    #[test]
    fn signed_zeros_tie() {
        assert_eq!(roc_auc(&[-0.0, 0.0], &[true, false]).unwrap(), 0.5);
    }
}
