//! Classification metrics, ranking metrics, and dataset splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("predictions and labels have different lengths ({predictions} vs {labels})")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("metrics need at least one example")]
    EmptyInput,
    #[error("roc_auc needs both classes present")]
    SingleClass,
    #[error("score at index {0} is not finite")]
    NonFiniteScore(usize),
    #[error("split fractions {0:?} must be positive and sum to 1")]
    InvalidFractions([f64; 3]),
    #[error("splitting {count} items at {fractions:?} leaves an empty fold")]
    DegenerateSplit { count: usize, fractions: [f64; 3] },
}

/// Binary confusion counts and the derived metrics. `precision` and `f1`
/// are absent when no positive predictions exist, `recall` when no positive
/// labels exist; absent values serialize as JSON null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub support: usize,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn confusion_metrics(
    predictions: &[bool],
    labels: &[bool],
) -> Result<ConfusionMetrics, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let support = predictions.len();
    let accuracy = (tp + tn) as f64 / support as f64;
    let precision = if tp + fp > 0 {
        Some(tp as f64 / (tp + fp) as f64)
    } else {
        None
    };
    let recall = if tp + fn_ > 0 {
        Some(tp as f64 / (tp + fn_) as f64)
    } else {
        None
    };
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) => {
            if p + r > 0.0 {
                Some(2.0 * p * r / (p + r))
            } else {
                Some(0.0)
            }
        }
        _ => None,
    };
    Ok(ConfusionMetrics {
        tp,
        fp,
        tn,
        fn_,
        support,
        accuracy,
        precision,
        recall,
        f1,
    })
}

/// Mann-Whitney ROC-AUC: the probability that a random positive outscores a
/// random negative, with ties counting one half. Computed via average ranks,
/// which agrees exactly with all-pairs enumeration.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(i));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Tied scores share the average of their 1-based rank positions.
        let rank = (i + j + 2) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = rank;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Train/validation/test identifier sets, in shuffled order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSets {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded shuffle split. Fold sizes are `floor(n * train)`, `floor(n * val)`,
/// and the remainder for test.
pub fn split_sboms(
    ids: &[String],
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitSets, MetricsError> {
    validate_fractions(fractions)?;
    let n = ids.len();
    let (n_train, n_val, n_test) = fold_sizes(n, fractions);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(MetricsError::DegenerateSplit {
            count: n,
            fractions,
        });
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok(SplitSets {
        train: shuffled,
        val,
        test,
    })
}

pub(crate) fn validate_fractions(fractions: [f64; 3]) -> Result<(), MetricsError> {
    if fractions.iter().any(|&f| f <= 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(MetricsError::InvalidFractions(fractions));
    }
    Ok(())
}

pub(crate) fn fold_sizes(n: usize, fractions: [f64; 3]) -> (usize, usize, usize) {
    let n_train = (n as f64 * fractions[0]).floor() as usize;
    let n_val = (n as f64 * fractions[1]).floor() as usize;
    (n_train, n_val, n - n_train - n_val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn all_correct_predictions_score_one() {
        let labels = [true, false, true, false, false];
        let m = confusion_metrics(&labels, &labels).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision, Some(1.0));
        assert_eq!(m.recall, Some(1.0));
        assert_eq!(m.f1, Some(1.0));
        assert_eq!(m.support, 5);
    }

    #[test]
    fn all_negative_predictions_on_imbalanced_set() {
        // 18.72% positives, classifier predicts the majority class.
        let n = 10_000;
        let positives = 1872;
        let labels: Vec<bool> = (0..n).map(|i| i < positives).collect();
        let predictions = vec![false; n];
        let m = confusion_metrics(&predictions, &labels).unwrap();
        assert_eq!(m.accuracy, 0.8128);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.precision, None);
        assert_eq!(m.f1, None);

        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["precision"], serde_json::Value::Null);
        assert_eq!(json["fn"], serde_json::json!(1872));
    }

    #[test]
    fn hand_counted_confusion() {
        // tp=2, fp=1, fn=1, tn=6.
        let predictions = [true, true, true, false, false, false, false, false, false, false];
        let labels = [true, true, false, true, false, false, false, false, false, false];
        let m = confusion_metrics(&predictions, &labels).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (2, 1, 1, 6));
        assert!((m.precision.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.accuracy, 0.8);
    }

    #[test]
    fn confusion_validates_input() {
        assert!(matches!(
            confusion_metrics(&[true], &[true, false]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            confusion_metrics(&[], &[]),
            Err(MetricsError::EmptyInput)
        ));
    }

    #[test]
    fn confusion_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = rng.random_range(1..100);
            let predictions: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            let m = confusion_metrics(&predictions, &labels).unwrap();
            let tp = predictions
                .iter()
                .zip(&labels)
                .filter(|(&p, &l)| p && l)
                .count();
            assert_eq!(m.tp, tp);
            assert_eq!(m.tp + m.fp + m.tn + m.fn_, n);
        }
    }

    #[test]
    fn roc_auc_hand_example() {
        let auc = roc_auc(&[0.8, 0.6, 0.4, 0.2], &[true, false, true, false]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn roc_auc_extremes() {
        let auc = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 1.0);
        let auc = roc_auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn roc_auc_rejects_degenerate_input() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(MetricsError::SingleClass)
        ));
        assert!(matches!(
            roc_auc(&[0.1, f64::NAN], &[true, false]),
            Err(MetricsError::NonFiniteScore(1))
        ));
        assert!(matches!(
            roc_auc(&[0.1], &[true, false]),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    /// All-pairs reference implementation.
    fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    #[test]
    fn roc_auc_matches_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for round in 0..100 {
            let n = rng.random_range(2..=200);
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.35)).collect();
            // Guarantee both classes.
            labels[0] = true;
            if n > 1 {
                labels[1] = false;
            }
            // Quantized scores to force plenty of ties.
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0..20) as f64) / 20.0)
                .collect();
            let fast = roc_auc(&scores, &labels).unwrap();
            let slow = brute_force_auc(&scores, &labels);
            assert_eq!(fast, slow, "round {round} diverged");
        }
    }

    #[test]
    fn roc_auc_invariant_under_increasing_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 80;
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let transformed: Vec<f64> = scores.iter().map(|s| (2.0 * s + 1.0).exp()).collect();
        assert_eq!(
            roc_auc(&scores, &labels).unwrap(),
            roc_auc(&transformed, &labels).unwrap()
        );
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("sbom-{i:03}")).collect()
    }

    #[test]
    fn split_sizes_match_rounding_rule() {
        let s = split_sboms(&ids(200), [0.7, 0.15, 0.15], 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (140, 30, 30));
        let s = split_sboms(&ids(10), [0.7, 0.15, 0.15], 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let input = ids(37);
        let a = split_sboms(&input, [0.7, 0.15, 0.15], 9).unwrap();
        let b = split_sboms(&input, [0.7, 0.15, 0.15], 9).unwrap();
        assert_eq!(a, b);
        let c = split_sboms(&input, [0.7, 0.15, 0.15], 10).unwrap();
        assert_ne!(a, c);

        let mut all: Vec<String> = a
            .train
            .iter()
            .chain(&a.val)
            .chain(&a.test)
            .cloned()
            .collect();
        all.sort();
        let mut want = input.clone();
        want.sort();
        assert_eq!(all, want);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        assert!(matches!(
            split_sboms(&ids(10), [0.7, 0.2, 0.2], 0),
            Err(MetricsError::InvalidFractions(_))
        ));
        assert!(matches!(
            split_sboms(&ids(10), [0.7, -0.1, 0.4], 0),
            Err(MetricsError::InvalidFractions(_))
        ));
        // Three ids cannot fill three folds at 70/15/15.
        assert!(matches!(
            split_sboms(&ids(3), [0.7, 0.15, 0.15], 0),
            Err(MetricsError::DegenerateSplit { .. })
        ));
    }
}
