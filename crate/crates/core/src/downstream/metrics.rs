use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ClassId;
use crate::error::{Error, Result};
use crate::util::mean_std;

pub const METRICS_CSV_HEADER: &str = "dataset,accuracy_mean,accuracy_std,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std";

/// Metrics of one train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy plus support-weighted precision, recall and F1. Classes in
/// `classes` that never occur in `y_true` have zero weight.
pub fn evaluate(
    y_true: &[ClassId],
    y_pred: &[ClassId],
    classes: &[ClassId],
) -> Result<SplitMetrics> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::contract(format!(
            "evaluate: {} true labels and {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let n = y_true.len() as f64;
    let correct = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    let mut all: Vec<ClassId> = classes.iter().chain(y_true).cloned().collect();
    all.sort_unstable();
    all.dedup();
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for &c in &all {
        let support = y_true.iter().filter(|&&t| t == c).count();
        if support == 0 {
            continue;
        }
        let tp = y_true
            .iter()
            .zip(y_pred)
            .filter(|(&t, &p)| t == c && p == c)
            .count() as f64;
        let predicted = y_pred.iter().filter(|&&p| p == c).count() as f64;
        let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let r = tp / support as f64;
        let f = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
        let weight = support as f64 / n;
        precision += weight * p;
        recall += weight * r;
        f1 += weight * f;
    }
    Ok(SplitMetrics {
        accuracy: correct as f64 / n,
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation over splits.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        MeanStd { mean, std }
    }
}

/// Aggregate over splits, one row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub dataset: String,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub splits: Vec<SplitMetrics>,
}

/// Rounds to 4 significant digits and prints the shortest form.
pub fn format_number(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = 3 - v.abs().log10().floor() as i32;
    let rounded = if digits >= 0 {
        let s = format!("{:.*}", digits as usize, v);
        s.parse::<f64>().expect("formatted float")
    } else {
        let scale = 10f64.powi(-digits);
        (v / scale).round() * scale
    };
    format!("{rounded}")
}

impl Metrics {
    pub fn from_splits(dataset: impl Into<String>, splits: Vec<SplitMetrics>) -> Self {
        let pick =
            |f: fn(&SplitMetrics) -> f64| MeanStd::of(&splits.iter().map(f).collect::<Vec<_>>());
        Metrics {
            dataset: dataset.into(),
            accuracy: pick(|s| s.accuracy),
            precision: pick(|s| s.precision),
            recall: pick(|s| s.recall),
            f1: pick(|s| s.f1),
            splits,
        }
    }

    fn columns(&self) -> [MeanStd; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }

    /// `dataset,acc_mean,acc_std,...` without a trailing newline.
    pub fn csv_row(&self) -> String {
        let mut row = self.dataset.clone();
        for c in self.columns() {
            write!(row, ",{},{}", format_number(c.mean), format_number(c.std))
                .expect("string write");
        }
        row
    }

    /// `Suturing & 0.812 ± 0.0228 & ...` table row.
    pub fn table_row(&self) -> String {
        let cells: Vec<String> = self
            .columns()
            .iter()
            .map(|c| format!("{} ± {}", format_number(c.mean), format_number(c.std)))
            .collect();
        format!("{} & {}", self.dataset, cells.join(" & "))
    }

    pub fn to_csv(rows: &[Metrics]) -> String {
        let mut out = format!("{METRICS_CSV_HEADER}\n");
        for m in rows {
            out.push_str(&m.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn write_files(rows: &[Metrics], csv: &Path, json: &Path) -> Result<()> {
        for (path, text) in [
            (csv, Self::to_csv(rows)),
            (json, serde_json::to_string_pretty(rows)? + "\n"),
        ] {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2];
        let m = evaluate(&y, &y, &[0, 1, 2]).unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn hand_computed_confusion() {
        let m = evaluate(&[0, 0, 1, 1], &[0, 1, 1, 1], &[0, 1]).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert!((m.precision - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert!((m.recall - 0.75).abs() < 1e-12);
        let f_a = 2.0 * 1.0 * 0.5 / 1.5;
        let f_b = 2.0 * (2.0 / 3.0) / (5.0 / 3.0);
        assert!((m.f1 - 0.5 * (f_a + f_b)).abs() < 1e-12);
    }

    #[test]
    fn constant_prediction_on_balanced_data() {
        let m = evaluate(&[0, 1, 0, 1], &[1, 1, 1, 1], &[0, 1]).unwrap();
        assert_eq!(m.accuracy, 0.5);
    }

    #[test]
    fn absent_classes_have_no_weight() {
        let a = evaluate(&[0, 1], &[0, 1], &[0, 1]).unwrap();
        let b = evaluate(&[0, 1], &[0, 1], &[0, 1, 7]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_input_is_contract_error() {
        assert!(matches!(evaluate(&[], &[], &[0]), Err(Error::Contract(_))));
        assert!(matches!(
            evaluate(&[0], &[0, 1], &[0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(0.812), "0.812");
        assert_eq!(format_number(0.0228), "0.0228");
        assert_eq!(format_number(0.053191), "0.05319");
        assert_eq!(format_number(0.76249), "0.7625");
        assert_eq!(format_number(1.0), "1");
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(12345.0), "12350");
    }

    #[test]
    fn rows_render_like_results_tables() {
        let m = Metrics {
            dataset: "Suturing".into(),
            accuracy: MeanStd {
                mean: 0.812,
                std: 0.0228,
            },
            precision: MeanStd {
                mean: 0.83,
                std: 0.01,
            },
            recall: MeanStd {
                mean: 0.812,
                std: 0.0228,
            },
            f1: MeanStd {
                mean: 0.8,
                std: 0.02,
            },
            splits: vec![],
        };
        assert!(m.table_row().starts_with("Suturing & 0.812 ± 0.0228 & "));
        assert!(m.csv_row().starts_with("Suturing,0.812,0.0228,"));
        let csv = Metrics::to_csv(std::slice::from_ref(&m));
        assert_eq!(csv.lines().next(), Some(METRICS_CSV_HEADER));
    }
}
