use std::fmt::Write as _;

use super::TrainError;

/// Classification metrics in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `confusion[label][prediction]`
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<usize>,
}

impl MetricsReport {
    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total(&self) -> usize {
        self.support.iter().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.num_classes()).map(|c| self.confusion[c][c]).sum()
    }

    /// Human-readable summary with the confusion matrix.
    pub fn render(&self, class_names: &[String]) -> String {
        let name = |c: usize| class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
        let mut s = String::new();
        let _ = writeln!(s, "accuracy  {:.2}%", self.accuracy);
        let _ = writeln!(s, "macro-F1  {:.2}%", self.macro_f1);
        let _ = writeln!(s, "{:<14} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support");
        for c in 0..self.num_classes() {
            let _ = writeln!(
                s,
                "{:<14} {:>9.2} {:>9.2} {:>9.2} {:>8}",
                name(c),
                self.precision[c],
                self.recall[c],
                self.f1[c],
                self.support[c]
            );
        }
        let _ = writeln!(s, "confusion (rows: label, columns: prediction)");
        for (c, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|n| format!("{n:>5}")).collect();
            let _ = writeln!(s, "{:<14}{}", name(c), cells.join(""));
        }
        s
    }

    /// `class,precision,recall,f1,support` rows, then `accuracy` and
    /// `macro_f1` summary rows.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut s = String::from("class,precision,recall,f1,support\n");
        for c in 0..self.num_classes() {
            let name = class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
            let _ = writeln!(
                s,
                "{name},{:?},{:?},{:?},{}",
                self.precision[c], self.recall[c], self.f1[c], self.support[c]
            );
        }
        let _ = writeln!(s, "accuracy,,,{:?},{}", self.accuracy, self.total());
        let _ = writeln!(s, "macro_f1,,,{:?},{}", self.macro_f1, self.total());
        s
    }
}

/// Accuracy, per-class precision/recall/F1 and macro-F1, all in percent.
/// A class with no support, or no predictions, scores 0 where undefined.
pub fn compute_metrics(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<MetricsReport, TrainError> {
    if preds.is_empty() {
        return Err(TrainError::EmptyInput("metrics need at least one prediction"));
    }
    if preds.len() != labels.len() {
        return Err(TrainError::InvalidConfig(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        let bad = if l >= num_classes { l } else { p };
        if bad >= num_classes {
            return Err(TrainError::LabelOutOfRange {
                label: bad,
                num_classes,
            });
        }
        confusion[l][p] += 1;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    let support: Vec<usize> = confusion.iter().map(|row| row.iter().sum()).collect();
    let predicted: Vec<usize> = (0..num_classes).map(|c| confusion.iter().map(|row| row[c]).sum()).collect();
    let precision: Vec<f64> = (0..num_classes).map(|c| ratio(confusion[c][c], predicted[c])).collect();
    let recall: Vec<f64> = (0..num_classes).map(|c| ratio(confusion[c][c], support[c])).collect();
    let f1: Vec<f64> = precision
        .iter()
        .zip(&recall)
        .map(|(&p, &r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        .collect();
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        accuracy: ratio(correct, preds.len()),
        macro_f1: f1.iter().sum::<f64>() / num_classes as f64,
        confusion,
        precision,
        recall,
        f1,
        support,
    })
}
