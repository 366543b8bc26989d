//! Accuracy, per-class accuracy and confusion matrices.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{FusionModel, Sample};

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let k = classes.len();
        Self {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_predictions(classes: Vec<String>, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::dim("confusion matrix", &[truth.len()], &[predicted.len()]));
        }
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.record(t, p)?;
        }
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.num_classes();
        for i in [truth, predicted] {
            if i >= k {
                return Err(Error::Index { index: i, len: k });
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Element-wise sum. Class tables must agree.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::Consistency(format!(
                "cannot pool confusion matrices over {} and {} classes",
                self.num_classes(),
                other.num_classes()
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    /// Row percentages; an all-zero row stays zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|r| {
                let s: u64 = r.iter().sum();
                r.iter()
                    .map(|&c| if s == 0 { 0.0 } else { 100.0 * c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    pub fn metrics(&self) -> Metrics {
        let total = self.total();
        let per_class = self
            .row_sums()
            .iter()
            .enumerate()
            .map(|(i, &n)| (n > 0).then(|| self.counts[i][i] as f64 / n as f64))
            .collect();
        Metrics {
            accuracy: if total == 0 {
                0.0
            } else {
                self.trace() as f64 / total as f64
            },
            per_class,
            samples: total,
        }
    }

    /// Header `class,<name0>,<name1>,...`, then one row per true class in index
    /// order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class");
        for c in &self.classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (name, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }

    /// Row-normalized percentages in the same layout as [`Self::to_csv`].
    pub fn to_normalized_csv(&self) -> String {
        let mut out = String::from("class");
        for c in &self.classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (name, row) in self.classes.iter().zip(self.row_normalized()) {
            out.push_str(name);
            for v in row {
                let _ = write!(out, ",{v:.2}");
            }
            out.push('\n');
        }
        out
    }

    /// Whitespace-separated row-normalized matrix, readable by gnuplot's
    /// `plot 'file' matrix with image`.
    pub fn to_heatmap(&self) -> String {
        let mut out = String::from("# rows: true class, columns: predicted class, values: row percent\n# classes:");
        for c in &self.classes {
            let _ = write!(out, " {c}");
        }
        out.push('\n');
        for row in self.row_normalized() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` for classes with no test samples.
    pub per_class: Vec<Option<f64>>,
    pub samples: u64,
}

impl Metrics {
    /// Mean of the defined per-class accuracies.
    pub fn macro_accuracy(&self) -> Option<f64> {
        let defined: Vec<f64> = self.per_class.iter().flatten().copied().collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Eval-mode predictions over `test`, in sample order.
pub fn evaluate(model: &FusionModel, test: &[Sample], classes: &[String]) -> Result<(Metrics, ConfusionMatrix)> {
    if test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    if classes.len() != model.config().num_classes {
        return Err(Error::Config(format!(
            "model has {} classes but the class table has {}",
            model.config().num_classes,
            classes.len()
        )));
    }
    let preds: Vec<usize> = test.par_iter().map(|s| model.predict(s)).collect::<Result<_>>()?;
    let truth: Vec<usize> = test.iter().map(|s| s.label).collect();
    let cm = ConfusionMatrix::from_predictions(classes.to_vec(), &truth, &preds)?;
    Ok((cm.metrics(), cm))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvSummary {
    pub fold_accuracies: Vec<f64>,
    pub pooled: ConfusionMatrix,
    /// Total correct over total evaluated.
    pub pooled_accuracy: f64,
    pub metrics: Metrics,
}

pub fn aggregate_cv(folds: &[ConfusionMatrix]) -> Result<CvSummary> {
    let first = folds
        .first()
        .ok_or_else(|| Error::Config("no folds to aggregate".into()))?;
    let mut pooled = ConfusionMatrix::new(first.classes.clone());
    for f in folds {
        pooled.merge(f)?;
    }
    let metrics = pooled.metrics();
    Ok(CvSummary {
        fold_accuracies: folds.iter().map(|f| f.metrics().accuracy).collect(),
        pooled_accuracy: metrics.accuracy,
        metrics,
        pooled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn all_correct() {
        let cm = ConfusionMatrix::from_predictions(names(3), &[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
        assert_eq!(cm.metrics().accuracy, 1.0);
    }

    #[test]
    fn hand_count() {
        let cm = ConfusionMatrix::from_predictions(names(2), &[0, 1, 1], &[0, 0, 1]).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0], vec![1, 1]]);
        assert!((cm.metrics().accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(cm.row_sums(), vec![1, 2]);
    }

    #[test]
    fn absent_class_is_undefined() {
        let cm = ConfusionMatrix::from_predictions(names(3), &[0, 0, 1], &[0, 1, 1]).unwrap();
        let m = cm.metrics();
        assert_eq!(m.per_class, vec![Some(0.5), Some(1.0), None]);
        assert_eq!(m.macro_accuracy(), Some(0.75));
        assert_eq!(cm.row_normalized()[2], vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn pooled_accuracy() {
        let a = ConfusionMatrix::from_predictions(names(2), &[0, 1], &[0, 0]).unwrap();
        let b = ConfusionMatrix::from_predictions(names(2), &[0, 1], &[0, 1]).unwrap();
        let s = aggregate_cv(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.fold_accuracies, vec![0.5, 1.0]);
        assert_eq!(s.pooled_accuracy, 0.75);
        let r = aggregate_cv(&[b, a.clone()]).unwrap();
        assert_eq!(r.pooled, s.pooled);

        let single = aggregate_cv(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.pooled, a);
        assert_eq!(single.pooled_accuracy, a.metrics().accuracy);

        let c = ConfusionMatrix::new(names(3));
        assert!(aggregate_cv(&[a, c]).is_err());
        assert!(aggregate_cv(&[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let cm = ConfusionMatrix::from_predictions(vec!["run".into(), "jump".into()], &[0, 1, 1], &[0, 0, 1]).unwrap();
        assert_eq!(cm.to_csv(), "class,run,jump\nrun,1,0\njump,1,1\n");
        assert_eq!(
            cm.to_normalized_csv(),
            "class,run,jump\nrun,100.00,0.00\njump,50.00,50.00\n"
        );
    }

    #[test]
    fn out_of_range_prediction() {
        assert!(ConfusionMatrix::from_predictions(names(2), &[0], &[2]).is_err());
    }
}
