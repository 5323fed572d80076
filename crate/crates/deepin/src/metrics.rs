//! Prediction, selection and structure metrics, and mean/SD summaries.

use deepin_core::trainer::active_structure;
use deepin_core::{DeepInModel, Task};
use serde::Serialize;

use crate::error::{HarnessError, Result};

/// Task-dependent prediction metrics. Regression fills `pe` and `mse`,
/// classification fills `acc` and `auc`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PredictionMetrics {
    pub pe: Option<f64>,
    pub mse: Option<f64>,
    pub acc: Option<f64>,
    pub auc: Option<f64>,
    /// Why a metric is missing.
    pub diagnostics: Vec<String>,
}

/// Metrics of predictions `pred` against `y`.
///
/// For classification `pred` holds probabilities of class 1; a prediction
/// counts as class 1 when it exceeds 0.5. For regression the MSE is taken
/// against `f0` when given and against `y` otherwise.
pub fn prediction_metrics(pred: &[f64], y: &[f64], f0: Option<&[f64]>, task: Task) -> Result<PredictionMetrics> {
    if pred.len() != y.len() || f0.is_some_and(|f| f.len() != y.len()) {
        return Err(HarnessError::Contract("prediction_metrics: length mismatch".into()));
    }
    if y.is_empty() {
        return Err(HarnessError::Contract("prediction_metrics: no observations".into()));
    }
    if pred.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(HarnessError::Contract("prediction_metrics: non-finite value".into()));
    }
    let mut out = PredictionMetrics::default();
    match task {
        Task::Regression => {
            let sse: f64 = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum();
            let ss: f64 = y.iter().map(|t| t * t).sum();
            if ss > 0.0 {
                out.pe = Some(sse / ss);
            } else {
                out.diagnostics.push("PE undefined: response is identically zero".into());
            }
            let target = f0.unwrap_or(y);
            let mse = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64;
            out.mse = Some(mse);
        }
        Task::Classification => {
            if y.iter().any(|&t| t != 0.0 && t != 1.0) {
                return Err(HarnessError::Contract("prediction_metrics: labels must be 0 or 1".into()));
            }
            let correct = pred.iter().zip(y).filter(|(p, t)| (**p > 0.5) == (**t == 1.0)).count();
            out.acc = Some(correct as f64 / y.len() as f64);
            match auc(pred, y) {
                Some(a) => out.auc = Some(a),
                None => out.diagnostics.push("AUC undefined: only one class present".into()),
            }
        }
    }
    Ok(out)
}

/// Fraction of (positive, negative) pairs with the positive scored strictly
/// higher; ties count 0. `None` when either class is absent.
pub fn auc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let mut neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| **l != 1.0).map(|(s, _)| *s).collect();
    let n_neg = neg.len();
    let n_pos = scores.len() - n_neg;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    neg.sort_by(f64::total_cmp);
    let mut wins: u64 = 0;
    for (s, l) in scores.iter().zip(labels) {
        if *l == 1.0 {
            wins += neg.partition_point(|v| v < s) as u64;
        }
    }
    Some(wins as f64 / (n_pos as f64 * n_neg as f64))
}

/// `(TPR, FPR)` of the selected 0-based variables against the true support
/// among `d` variables.
pub fn selection_metrics(selected: &[usize], truth: &[usize], d: usize) -> Result<(f64, f64)> {
    if selected.iter().chain(truth).any(|&j| j >= d) {
        return Err(HarnessError::Contract("selection_metrics: index out of range".into()));
    }
    let mut in_truth = vec![false; d];
    for &j in truth {
        in_truth[j] = true;
    }
    let n_true = in_truth.iter().filter(|t| **t).count();
    if n_true == 0 {
        return Err(HarnessError::Contract("selection_metrics: true support is empty".into()));
    }
    if n_true == d {
        return Err(HarnessError::Contract("selection_metrics: true support has no complement".into()));
    }
    let mut picked = vec![false; d];
    for &j in selected {
        picked[j] = true;
    }
    let tp = (0..d).filter(|&j| picked[j] && in_truth[j]).count();
    let fp = (0..d).filter(|&j| picked[j] && !in_truth[j]).count();
    Ok((tp as f64 / n_true as f64, fp as f64 / (d - n_true) as f64))
}

/// Proportion of exactly-zero network parameters.
pub fn prop_zero(model: &DeepInModel) -> f64 {
    let size = model.net.params().len();
    1.0 - active_structure(model).nnz as f64 / size as f64
}

/// Mean and sample standard deviation (`n - 1` denominator, 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some(Summary {
        mean,
        sd,
        count: values.len(),
    })
}
