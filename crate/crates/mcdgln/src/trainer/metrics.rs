use serde::{Deserialize, Serialize};

/// The four evaluation metrics at a 0.5 decision threshold, with flags for
/// the degenerate cases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
    pub auroc: f64,
    /// False when no positive predictions existed (precision reported as 0).
    pub precision_defined: bool,
    /// False when the batch was single-class (AUROC reported as 0.5).
    pub auroc_defined: bool,
}

/// Computes accuracy, precision, F1, and AUROC of scores against 0/1 labels.
///
/// AUROC uses the rank statistic with average ranks, so ties count 0.5.
pub fn metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Metrics {
    assert_eq!(scores.len(), labels.len());
    assert!(!scores.is_empty(), "metrics need at least one sample");
    let n = scores.len();
    let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (s, y) in scores.iter().zip(labels) {
        let pred = if *s >= threshold { 1 } else { 0 };
        match (pred, *y) {
            (1, 1) => tp += 1,
            (0, 0) => tn += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => unreachable!(),
        }
    }
    let accuracy = (tp + tn) as f64 / n as f64;
    let precision_defined = tp + fp > 0;
    let precision = if precision_defined {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall_denom = tp + fn_;
    let recall = if recall_denom > 0 {
        tp as f64 / recall_denom as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let (auroc, auroc_defined) = rank_auroc(scores, labels);
    Metrics {
        accuracy,
        precision,
        f1,
        auroc,
        precision_defined,
        auroc_defined,
    }
}

/// AUROC via the Mann-Whitney rank statistic with average ranks for ties.
/// Single-class batches are undefined and reported as (0.5, false).
pub fn rank_auroc(scores: &[f64], labels: &[u8]) -> (f64, bool) {
    let pos = labels.iter().filter(|y| **y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return (0.5, false);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].partial_cmp(&scores[*b]).expect("finite scores"));
    // average ranks over tie groups (ranks are 1-based)
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(y, _)| **y == 1)
        .map(|(_, r)| r)
        .sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    (u / (pos as f64 * neg as f64), true)
}
