use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::Label;

/// Confusion counts with AD as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

/// Ratio metrics; a zero denominator yields 0 and sets the matching flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate_precision: bool,
    pub degenerate_recall: bool,
    pub degenerate_f1: bool,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

impl Confusion {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut c = Self::default();
        for (pred, gold) in pairs {
            match (pred, gold) {
                (Label::AD, Label::AD) => c.tp += 1,
                (Label::AD, Label::HC) => c.fp += 1,
                (Label::HC, Label::AD) => c.fn_ += 1,
                (Label::HC, Label::HC) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn scores(&self) -> Scores {
        let (tp, fp, fn_) = (self.tp as f64, self.fp as f64, self.fn_ as f64);
        let (accuracy, _) = ratio((self.tp + self.tn) as f64, self.total() as f64);
        let (precision, degenerate_precision) = ratio(tp, tp + fp);
        let (recall, degenerate_recall) = ratio(tp, tp + fn_);
        let (f1, degenerate_f1) = ratio(2.0 * precision * recall, precision + recall);
        Scores {
            accuracy,
            precision,
            recall,
            f1,
            degenerate_precision,
            degenerate_recall,
            degenerate_f1,
        }
    }
}

/// Fold-mean accuracy, pooled precision/recall/F1 and population standard
/// deviations across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fold_accuracies: Vec<f64>,
    pub fold_f1: Vec<f64>,
    pub pooled: Confusion,
    /// Mean of the fold accuracies.
    pub accuracy: f64,
    /// Accuracy of the pooled counts; equals `accuracy` only for equal folds.
    pub pooled_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub acc_std_dev: f64,
    pub f1_std_dev: f64,
    pub degenerate: Vec<String>,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `folds[i]` holds `(predicted, gold)` pairs of fold `i`.
pub fn compute_metrics(folds: &[Vec<(Label, Label)>]) -> Result<MetricsReport, EvalError> {
    if folds.is_empty() || folds.iter().any(Vec::is_empty) {
        return Err(EvalError::EmptyInput);
    }
    let mut pooled = Confusion::default();
    let mut fold_accuracies = Vec::with_capacity(folds.len());
    let mut fold_f1 = Vec::with_capacity(folds.len());
    let mut degenerate = Vec::new();
    for (i, fold) in folds.iter().enumerate() {
        let c = Confusion::from_pairs(fold.iter().copied());
        let s = c.scores();
        if s.degenerate_f1 {
            degenerate.push(format!("fold {i} f1"));
        }
        fold_accuracies.push(s.accuracy);
        fold_f1.push(s.f1);
        pooled.add(&c);
    }
    let s = pooled.scores();
    for (flag, name) in [
        (s.degenerate_precision, "precision"),
        (s.degenerate_recall, "recall"),
        (s.degenerate_f1, "f1"),
    ] {
        if flag {
            degenerate.push(name.to_string());
        }
    }
    let (accuracy, acc_std_dev) = mean_and_std(&fold_accuracies);
    let (_, f1_std_dev) = mean_and_std(&fold_f1);
    Ok(MetricsReport {
        fold_accuracies,
        fold_f1,
        pooled,
        accuracy,
        pooled_accuracy: s.accuracy,
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
        acc_std_dev,
        f1_std_dev,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::*;

    #[test]
    fn hand_confusion() {
        let report = compute_metrics(&[vec![(AD, AD), (AD, HC), (HC, AD), (HC, HC)]]).unwrap();
        assert_eq!(report.pooled, Confusion { tp: 1, fp: 1, fn_: 1, tn: 1 });
        assert_eq!((report.precision, report.recall, report.f1, report.accuracy), (0.5, 0.5, 0.5, 0.5));
    }

    #[test]
    fn perfect_folds() {
        let fold = vec![(AD, AD), (HC, HC)];
        let report = compute_metrics(&[fold.clone(), fold.clone(), fold]).unwrap();
        assert_eq!((report.accuracy, report.f1, report.acc_std_dev, report.f1_std_dev), (1.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn degenerate_is_zero_and_flagged() {
        let report = compute_metrics(&[vec![(HC, HC), (HC, HC)]]).unwrap();
        assert_eq!((report.precision, report.recall, report.f1), (0.0, 0.0, 0.0));
        assert!(report.degenerate.contains(&"precision".to_string()));
        assert_eq!(compute_metrics(&[]), Err(EvalError::EmptyInput));
    }

    #[test]
    fn fold_mean_differs_from_pooled_for_unequal_folds() {
        let report = compute_metrics(&[vec![(AD, AD)], vec![(AD, HC), (HC, HC), (HC, HC)]]).unwrap();
        assert!((report.accuracy - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((report.pooled_accuracy - 0.75).abs() < 1e-12);
    }
}
