//! Evaluation metrics for regression and binary classification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{predictions} predictions for {targets} targets")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("no samples to evaluate")]
    Empty,
}

/// Metrics of one prediction set.
///
/// `relative_mse` is `Σ(y − ŷ)² / Σ(y − ȳ)²` with `ȳ` the mean of the
/// evaluated targets; it is `None` when the targets have zero variance.
/// `energy_relative_mse` divides by `Σ y²` instead and is reported as a
/// diagnostic only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub count: usize,
    pub mse: f64,
    pub relative_mse: Option<f64>,
    pub energy_relative_mse: Option<f64>,
    pub accuracy: Option<f64>,
}

impl MetricReport {
    /// The error used for model selection: relative MSE for regression
    /// (raw MSE if relative MSE is undefined), `1 − accuracy` for
    /// classification.
    pub fn error(&self) -> f64 {
        match self.task {
            Task::Regression => self.relative_mse.unwrap_or(self.mse),
            Task::Classification => 1.0 - self.accuracy.unwrap_or(0.0),
        }
    }
}

/// For classification, `predictions` are probabilities (the sigmoid of the
/// model output) and the decision threshold is 0.5.
pub fn metrics(predictions: &[f64], targets: &[f64], task: Task) -> Result<MetricReport, MetricError> {
    if predictions.len() != targets.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            targets: targets.len(),
        });
    }
    if targets.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = targets.len() as f64;
    let sse: f64 = predictions.iter().zip(targets).map(|(p, y)| (y - p) * (y - p)).sum();
    let mean = targets.iter().sum::<f64>() / n;
    let sst: f64 = targets.iter().map(|y| (y - mean) * (y - mean)).sum();
    let energy: f64 = targets.iter().map(|y| y * y).sum();
    let ratio = |den: f64| if den > 0.0 { Some(sse / den) } else { None };
    let accuracy = match task {
        Task::Regression => None,
        Task::Classification => {
            let hits = predictions
                .iter()
                .zip(targets)
                .filter(|(&p, &y)| (p >= 0.5) == (y >= 0.5))
                .count();
            Some(hits as f64 / n)
        }
    };
    Ok(MetricReport {
        task,
        count: targets.len(),
        mse: sse / n,
        relative_mse: ratio(sst),
        energy_relative_mse: ratio(energy),
        accuracy,
    })
}

/// Mean and sample standard deviation (`n − 1` denominator; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
