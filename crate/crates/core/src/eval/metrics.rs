use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted
/// one half. Computed from average ranks in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("auc needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn count(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= threshold, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Scores on the positive class at a fixed threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub count: usize,
    pub threshold: f64,
    pub confusion: Confusion,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn classification_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(Error::Empty("classification scores"));
    }
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let c = Confusion::count(scores, labels, threshold);
    let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let both = labels.iter().any(|&y| y) && labels.iter().any(|&y| !y);
    Ok(MetricsReport {
        auc: if both { Some(auc(scores, labels)?) } else { None },
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        precision,
        recall,
        f1,
        count: scores.len(),
        threshold,
        confusion: c,
        precision_undefined,
        recall_undefined,
    })
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.auc {
            Some(a) => write!(f, "auc={a:.6}")?,
            None => write!(f, "auc=NA")?,
        }
        write!(
            f,
            " accuracy={:.6} precision={:.6} recall={:.6} f1={:.6} count={} threshold={}",
            self.accuracy, self.precision, self.recall, self.f1, self.count, self.threshold
        )?;
        let c = &self.confusion;
        write!(f, " tp={} fp={} fn={} tn={}", c.tp, c.fp, c.fn_, c.tn)?;
        if self.precision_undefined {
            write!(f, " precision_undefined=true")?;
        }
        if self.recall_undefined {
            write!(f, " recall_undefined=true")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn confusion_example() {
        let labels = [true, true, false, true, false, false, false, false, false, false];
        let scores = [0.9, 0.8, 0.7, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        let m = classification_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(m.confusion, Confusion { tp: 2, fp: 1, fn_: 1, tn: 6 });
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.accuracy - 0.8).abs() < 1e-15);
    }

    #[test]
    fn degenerate_predictions_are_flagged() {
        let m = classification_metrics(&[0.1, 0.2, 0.3], &[true, false, true], 0.5).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.precision_undefined && !m.recall_undefined);
        assert!(m.to_string().contains("precision_undefined=true"));
        let all = classification_metrics(&[0.1, 0.2, 0.3], &[true, false, true], 0.0).unwrap();
        assert_eq!(all.recall, 1.0);
        let single = classification_metrics(&[0.7], &[true], 0.5).unwrap();
        assert_eq!(single.auc, None);
        assert!(single.to_string().starts_with("auc=NA"));
    }
}
