//! Confusion matrices and the classification scores derived from them.
//!
//! Orientation is fixed: `counts[i][j]` is the number of instances
//! predicted as class `i` whose actual class is `j` (prediction rows,
//! actual columns).

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("predicted and actual have different lengths ({predicted} vs {actual})")]
    LengthMismatch { predicted: usize, actual: usize },
    #[error("label {0} is not in the class list")]
    UnknownLabel(u32),
    #[error("confusion matrix is empty")]
    Empty,
    #[error("counts must be a square matrix matching the {0} classes")]
    Shape(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<u32>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Wraps an existing table of counts (prediction rows × actual columns).
    pub fn from_counts(classes: Vec<u32>, counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        if counts.len() != classes.len() || counts.iter().any(|r| r.len() != classes.len()) {
            return Err(MetricsError::Shape(classes.len()));
        }
        Ok(Self { classes, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Correctly predicted instances per class.
    pub fn correct(&self) -> Vec<u64> {
        (0..self.classes.len()).map(|i| self.counts[i][i]).collect()
    }

    /// Instances predicted as each class.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Instances actually in each class.
    pub fn column_sums(&self) -> Vec<u64> {
        (0..self.classes.len()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    /// Same matrix under a relabeling: class `perm[i]` of the result is
    /// class `i` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> ConfusionMatrix {
        let k = self.classes.len();
        let mut classes = vec![0; k];
        let mut counts = vec![vec![0; k]; k];
        for i in 0..k {
            classes[perm[i]] = self.classes[i];
            for j in 0..k {
                counts[perm[i]][perm[j]] = self.counts[i][j];
            }
        }
        ConfusionMatrix { classes, counts }
    }
}

pub fn confusion_matrix(predicted: &[u32], actual: &[u32], classes: &[u32]) -> Result<ConfusionMatrix, MetricsError> {
    if predicted.len() != actual.len() {
        return Err(MetricsError::LengthMismatch { predicted: predicted.len(), actual: actual.len() });
    }
    let position = |label: u32| classes.iter().position(|&c| c == label).ok_or(MetricsError::UnknownLabel(label));
    let k = classes.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &a) in predicted.iter().zip(actual) {
        counts[position(p)?][position(a)?] += 1;
    }
    Ok(ConfusionMatrix { classes: classes.to_vec(), counts })
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// `counts[j][j] / column_sum[j]`; `None` for classes absent from the actuals.
pub fn per_class_recall(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    cm.column_sums().iter().zip(cm.correct()).map(|(&s, c)| (s > 0).then(|| c as f64 / s as f64)).collect()
}

/// `counts[i][i] / row_sum[i]`; `None` for classes never predicted.
pub fn per_class_precision(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    cm.row_sums().iter().zip(cm.correct()).map(|(&s, c)| (s > 0).then(|| c as f64 / s as f64)).collect()
}

/// Micro-averaged recall: pooled correct over pooled actuals.
pub fn micro_recall(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let actual: u64 = cm.column_sums().iter().sum();
    if actual == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(cm.correct().iter().sum::<u64>() as f64 / actual as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub classes: Vec<u32>,
    pub counts: Vec<Vec<u64>>,
    pub accuracy: f64,
    /// Rendered as "83.96%".
    pub accuracy_percent: String,
    #[serde(serialize_with = "crate::report::serialize_undefined_vec")]
    pub per_class_recall: Vec<Option<f64>>,
    #[serde(serialize_with = "crate::report::serialize_undefined_vec")]
    pub per_class_precision: Vec<Option<f64>>,
}

impl MetricsReport {
    pub fn new(cm: &ConfusionMatrix) -> Result<Self, MetricsError> {
        let acc = accuracy(cm)?;
        Ok(Self {
            classes: cm.classes.clone(),
            counts: cm.counts.clone(),
            accuracy: acc,
            accuracy_percent: crate::report::format_percent(acc),
            per_class_recall: per_class_recall(cm),
            per_class_precision: per_class_precision(cm),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}
