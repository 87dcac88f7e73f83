use std::fmt;
use std::path::Path;

use super::TrainError;

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,eval_acc,macro_f1,seconds";

/// One row of a run history. Accuracies and F1 are percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
    pub macro_f1: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunHistory {
    records: Vec<EpochRecord>,
}

/// `x` with 9 significant digits in positional notation.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

impl RunHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row; epochs must increase, metrics must be finite and the
    /// percentages must lie in [0, 100].
    pub fn push(&mut self, r: EpochRecord) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidHistory(m));
        if let Some(last) = self.records.last() {
            if r.epoch <= last.epoch {
                return bad(format!("epoch {} after epoch {}", r.epoch, last.epoch));
            }
        }
        let values = [r.train_loss, r.train_acc, r.eval_acc, r.macro_f1, r.seconds];
        if values.iter().any(|v| !v.is_finite()) {
            return bad(format!("non-finite metric in epoch {}", r.epoch));
        }
        if [r.train_acc, r.eval_acc, r.macro_f1].iter().any(|v| !(0.0..=100.0).contains(v)) {
            return bad(format!("percentage outside [0, 100] in epoch {}", r.epoch));
        }
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Row with the highest eval accuracy; ties go to the earlier epoch.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.eval_acc >= r.eval_acc => Some(b),
                _ => Some(r),
            })
    }

    /// First epoch whose eval accuracy reaches `threshold` percent.
    pub fn epochs_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find(|r| r.eval_acc >= threshold).map(|r| r.epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{HISTORY_HEADER}\n");
        for r in &self.records {
            let cells = [r.train_loss, r.train_acc, r.eval_acc, r.macro_f1, r.seconds].map(format_sig9);
            s.push_str(&format!("{},{}\n", r.epoch, cells.join(",")));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, TrainError> {
        let mut lines = text.lines();
        if lines.next() != Some(HISTORY_HEADER) {
            return Err(TrainError::InvalidHistory(format!("expected header `{HISTORY_HEADER}`")));
        }
        let mut h = Self::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = || TrainError::InvalidHistory(format!("row {}: `{line}`", i + 1));
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 6 {
                return Err(bad());
            }
            let f = |j: usize| cells[j].parse::<f64>().map_err(|_| bad());
            h.push(EpochRecord {
                epoch: cells[0].parse().map_err(|_| bad())?,
                train_loss: f(1)?,
                train_acc: f(2)?,
                eval_acc: f(3)?,
                macro_f1: f(4)?,
                seconds: f(5)?,
            })?;
        }
        Ok(h)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_csv(&text)
    }
}

/// A percentage rounded to one decimal, without a trailing `.0`.
pub fn format_percent(x: f64) -> String {
    let s = format!("{x:.1}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

/// One row of a run comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub epochs: usize,
    pub final_acc: f64,
    pub final_f1: f64,
    pub best_acc: f64,
    pub best_f1: f64,
    pub best_epoch: usize,
    pub epochs_to_threshold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub threshold: f64,
    pub rows: Vec<ComparisonRow>,
}

/// Final and best eval metrics of each named run, plus the first epoch at
/// which each reached `threshold` percent eval accuracy.
pub fn compare_runs(runs: &[(&str, &RunHistory)], threshold: f64) -> Result<ComparisonTable, TrainError> {
    let rows = runs
        .iter()
        .map(|&(method, h)| {
            let (Some(last), Some(best)) = (h.last(), h.best()) else {
                return Err(TrainError::EmptyInput("cannot compare an empty history"));
            };
            Ok(ComparisonRow {
                method: method.to_string(),
                epochs: last.epoch,
                final_acc: last.eval_acc,
                final_f1: last.macro_f1,
                best_acc: best.eval_acc,
                best_f1: best.macro_f1,
                best_epoch: best.epoch,
                epochs_to_threshold: h.epochs_to_threshold(threshold),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(ComparisonTable { threshold, rows })
}

impl fmt::Display for ComparisonTable {
    /// Markdown table: epochs, method, final accuracy and F1, then best
    /// metrics and epochs to threshold.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let thr = format_percent(self.threshold);
        writeln!(
            f,
            "| Epochs | Method | Accuracy | F1 Score | Best Accuracy | Best F1 | Best Epoch | Epochs to {thr}% |"
        )?;
        writeln!(f, "|---|---|---|---|---|---|---|---|")?;
        for r in &self.rows {
            let reach = r.epochs_to_threshold.map_or_else(|| "never".to_string(), |e| e.to_string());
            writeln!(
                f,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                r.epochs,
                r.method,
                format_percent(r.final_acc),
                format_percent(r.final_f1),
                format_percent(r.best_acc),
                format_percent(r.best_f1),
                r.best_epoch,
                reach
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, eval_acc: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: 1.0 / epoch as f64,
            train_acc: eval_acc,
            eval_acc,
            macro_f1: eval_acc / 2.0,
            seconds: 0.0,
        }
    }

    fn history(accs: &[f64]) -> RunHistory {
        let mut h = RunHistory::new();
        for (i, &a) in accs.iter().enumerate() {
            h.push(rec(i + 1, a)).unwrap();
        }
        h
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(2.302585092994046), "2.30258509");
        assert_eq!(format_sig9(100.0), "100.000000");
        assert_eq!(format_sig9(0.000123456789123), "0.000123456789");
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(-1.5), "-1.50000000");
    }

    #[test]
    fn percent_formatting_drops_trailing_zero() {
        assert_eq!(format_percent(26.0), "26");
        assert_eq!(format_percent(14.2), "14.2");
        assert_eq!(format_percent(24.64), "24.6");
        assert_eq!(format_percent(100.0), "100");
    }

    #[test]
    fn rejects_bad_rows() {
        let mut h = history(&[10.0]);
        assert!(h.push(rec(1, 20.0)).is_err());
        assert!(h.push(rec(2, 120.0)).is_err());
        assert!(h.push(rec(2, f64::NAN)).is_err());
        assert_eq!(h.len(), 1);
    }

    #[test]
    fn best_prefers_earlier_on_ties() {
        let h = history(&[10.0, 50.0, 30.0, 50.0]);
        assert_eq!(h.best().unwrap().epoch, 2);
    }

    #[test]
    fn threshold_epoch_or_never() {
        let h = history(&[10.0, 79.9, 80.0, 90.0]);
        assert_eq!(h.epochs_to_threshold(80.0), Some(3));
        assert_eq!(h.epochs_to_threshold(95.0), None);
    }

    #[test]
    fn csv_round_trip() {
        let h = history(&[12.5, 33.0, 71.25]);
        let csv = h.to_csv();
        assert_eq!(csv.lines().next(), Some(HISTORY_HEADER));
        assert_eq!(csv.lines().nth(1), Some("1,1.00000000,12.5000000,12.5000000,6.25000000,0"));
        let back = RunHistory::from_csv(&csv).unwrap();
        assert_eq!(back.to_csv(), csv);
    }

    #[test]
    fn identical_histories_give_identical_rows() {
        let h = history(&[10.0, 40.0, 80.0]);
        let t = compare_runs(&[("a", &h), ("a", &h)], 80.0).unwrap();
        assert_eq!(t.rows[0], t.rows[1]);
        let text = t.to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[2], lines[3]);
        assert!(compare_runs(&[("x", &RunHistory::new())], 80.0).is_err());
    }

    #[test]
    fn never_reached_is_spelled_out() {
        let h = history(&[10.0]);
        let t = compare_runs(&[("scratch", &h)], 80.0).unwrap();
        assert!(t.to_string().lines().nth(2).unwrap().ends_with("| never |"));
    }
}
