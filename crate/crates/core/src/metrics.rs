//! Accuracy bookkeeping and the run-level metrics: last accuracy, average
//! accuracy and the forgetting measure.
//!
//! All values are fractions in `[0, 1]`. Stage and task numbers are 1-based.

use crate::bank::ClassId;
use crate::error::{Error, Result};

/// Fraction of exact matches.
pub fn accuracy(predictions: &[ClassId], labels: &[ClassId]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Validation("accuracy of an empty set".into()));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Lower-triangular matrix of task accuracies: cell `(l, b)` holds the
/// accuracy on task `b`'s classes measured after stage `l`, for `b <= l`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    stages: usize,
    // Row l (0-based) has l + 1 cells.
    rows: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(stages: usize) -> Self {
        Self {
            stages,
            rows: (1..=stages).map(|l| vec![None; l]).collect(),
        }
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn get(&self, l: usize, b: usize) -> Option<f64> {
        if l == 0 || b == 0 || b > l || l > self.stages {
            return None;
        }
        self.rows[l - 1][b - 1]
    }

    /// Row `l` as written so far.
    pub fn row(&self, l: usize) -> Option<&[Option<f64>]> {
        (1..=self.stages)
            .contains(&l)
            .then(|| self.rows[l - 1].as_slice())
    }

    /// Record the task accuracies measured after stage `l`.
    pub fn record(&mut self, l: usize, per_task: &[(usize, f64)]) -> Result<()> {
        if l == 0 || l > self.stages {
            return Err(Error::Validation(format!(
                "stage {l} out of range [1, {}]",
                self.stages
            )));
        }
        for &(b, acc) in per_task {
            if b == 0 || b > l {
                return Err(Error::Validation(format!(
                    "task {b} cannot be measured after stage {l}"
                )));
            }
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::Validation(format!(
                    "accuracy {acc} for task {b} is outside [0, 1]"
                )));
            }
        }
        for (i, &(b, _)) in per_task.iter().enumerate() {
            let repeated = per_task[..i].iter().any(|&(prev, _)| prev == b);
            if repeated || self.rows[l - 1][b - 1].is_some() {
                return Err(Error::State(format!("cell ({l}, {b}) written twice")));
            }
        }
        for &(b, acc) in per_task {
            self.rows[l - 1][b - 1] = Some(acc);
        }
        Ok(())
    }
}

/// Functional form of [`AccuracyMatrix::record`].
pub fn record_task_accuracies(
    mut matrix: AccuracyMatrix,
    l: usize,
    per_task: &[(usize, f64)],
) -> Result<AccuracyMatrix> {
    matrix.record(l, per_task)?;
    Ok(matrix)
}

/// Mean of the per-stage accuracies.
pub fn average_accuracy(per_stage: &[f64]) -> Result<f64> {
    if per_stage.is_empty() {
        return Err(Error::Validation("average of zero stages".into()));
    }
    Ok(per_stage.iter().sum::<f64>() / per_stage.len() as f64)
}

/// Average, over tasks `1..B-1`, of the drop from the best accuracy the
/// task reached before the final stage to its accuracy after the final
/// stage. Negative values indicate backward transfer.
pub fn forgetting(matrix: &AccuracyMatrix) -> Result<f64> {
    let last = matrix.stages();
    if last < 2 {
        return Err(Error::UndefinedMetric(format!(
            "forgetting needs at least 2 stages, got {last}"
        )));
    }
    let cell = |l: usize, b: usize| {
        matrix
            .get(l, b)
            .ok_or_else(|| Error::State(format!("accuracy cell ({l}, {b}) is missing")))
    };
    let mut total = 0.0;
    for b in 1..last {
        let final_acc = cell(last, b)?;
        let mut best = f64::NEG_INFINITY;
        for l in b..last {
            best = best.max(cell(l, b)? - final_acc);
        }
        total += best;
    }
    Ok(total / (last - 1) as f64)
}

/// Summary of one run's accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub per_stage_acc: Vec<f64>,
    pub last_acc: f64,
    pub avg_acc: f64,
    /// `None` for single-stage runs.
    pub forgetting: Option<f64>,
}

impl RunMetrics {
    pub fn compute(per_stage_acc: Vec<f64>, matrix: &AccuracyMatrix) -> Result<Self> {
        let avg_acc = average_accuracy(&per_stage_acc)?;
        let last_acc = *per_stage_acc.last().expect("non-empty after average");
        let forgetting = match forgetting(matrix) {
            Ok(f) => Some(f),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            per_stage_acc,
            last_acc,
            avg_acc,
            forgetting,
        })
    }
}
