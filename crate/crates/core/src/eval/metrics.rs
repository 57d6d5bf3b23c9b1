use serde::{Deserialize, Serialize};

/// Probability threshold for hard predictions.
pub const THRESHOLD: f64 = 0.5;

/// The five reported metrics, in report order.
pub const METRIC_NAMES: [&str; 5] = ["accuracy", "roc_auc", "f1", "precision", "recall"];

/// Area under the ROC curve as the Mann-Whitney statistic
/// `(#{pos > neg} + ½ #{ties}) / (#pos · #neg)`. `None` when only one
/// class is present.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Walk tie blocks in ascending score order, counting negatives strictly
    // below. Doubling keeps everything in integers until the final divide.
    let (mut below_neg, mut twice_wins) = (0u64, 0u64);
    let (mut n_pos, mut n_neg) = (0u64, 0u64);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let pos = idx[i..j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        let neg = (j - i) as u64 - pos;
        twice_wins += pos * (2 * below_neg + neg);
        below_neg += neg;
        n_pos += pos;
        n_neg += neg;
        i = j;
    }
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    Some(twice_wins as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn from_predictions(preds: &[u8], labels: &[u8]) -> Self {
        assert_eq!(preds.len(), labels.len(), "predictions and labels differ in length");
        let mut c = Confusion::default();
        for (&p, &y) in preds.iter().zip(labels) {
            match (p, y) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total(), "accuracy")
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp, "precision")
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_, "recall")
    }

    /// `2·tp / (2·tp + fp + fn)`, which equals the harmonic mean of
    /// precision and recall whenever both are nonzero.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_, "f1")
    }
}

fn ratio(num: u64, den: u64, name: &str) -> f64 {
    if den == 0 {
        log::warn!("{name} has a zero denominator; reporting 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn threshold(probs: &[f64]) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= THRESHOLD)).collect()
}

pub fn accuracy(preds: &[u8], labels: &[u8]) -> f64 {
    Confusion::from_predictions(preds, labels).accuracy()
}

pub fn precision(preds: &[u8], labels: &[u8]) -> f64 {
    Confusion::from_predictions(preds, labels).precision()
}

pub fn recall(preds: &[u8], labels: &[u8]) -> f64 {
    Confusion::from_predictions(preds, labels).recall()
}

pub fn f1(preds: &[u8], labels: &[u8]) -> f64 {
    Confusion::from_predictions(preds, labels).f1()
}

/// Metric values of one fold; `roc_auc` is `None` for single-class test sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub accuracy: f64,
    pub roc_auc: Option<f64>,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl FoldMetrics {
    pub fn compute(probs: &[f64], labels: &[u8]) -> Self {
        let c = Confusion::from_predictions(&threshold(probs), labels);
        Self {
            accuracy: c.accuracy(),
            roc_auc: roc_auc(probs, labels),
            f1: c.f1(),
            precision: c.precision(),
            recall: c.recall(),
        }
    }

    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [Option<f64>; 5] {
        [Some(self.accuracy), self.roc_auc, Some(self.f1), Some(self.precision), Some(self.recall)]
    }
}
