//! Evaluation metrics: MSE, MAE, and MAPE over targets that are not
//! near zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Targets with |y| at or below this are excluded from MAPE rather than
/// distorting it with a denominator epsilon.
pub const MAPE_EPSILON: f64 = 1e-9;

/// One evaluation result as persisted to results.jsonl. The field set is
/// stable; `mape` is null when every target was near zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
    pub mape: Option<f64>,
    pub task_count: usize,
    pub timestamp: u64,
}

impl MetricsRecord {
    pub fn with_method(mut self, method: &str) -> Self {
        self.method = method.to_string();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_task_count(mut self, task_count: usize) -> Self {
        self.task_count = task_count;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.mse.is_finite() && self.mae.is_finite() && self.mape.is_none_or(|m| m.is_finite())
    }
}

/// MSE/MAE/MAPE over aligned prediction and target slices. MAPE averages
/// |error|/|target| over targets with |y| > 1e-9 and is absent when none
/// qualify; MSE and MAE remain valid either way.
pub fn compute_metrics(predictions: &[f64], targets: &[f64]) -> Result<MetricsRecord> {
    if predictions.is_empty() || targets.is_empty() {
        return Err(Error::EmptyInput);
    }
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    let n = predictions.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut ape = 0.0;
    let mut ape_n = 0usize;
    for (&p, &y) in predictions.iter().zip(targets.iter()) {
        let err = p - y;
        se += err * err;
        ae += err.abs();
        if y.abs() > MAPE_EPSILON {
            ape += err.abs() / y.abs();
            ape_n += 1;
        }
    }
    Ok(MetricsRecord {
        method: String::new(),
        seed: 0,
        mse: se / n,
        mae: ae / n,
        mape: (ape_n > 0).then(|| ape / ape_n as f64),
        task_count: 1,
        timestamp: 0,
    })
}

/// MAPE alone; errs when it is undefined because every target is near zero.
pub fn mape(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    compute_metrics(predictions, targets)?
        .mape
        .ok_or(Error::AllTargetsNearZero)
}

/// Render one result row in the four-decimal tabular layout used by the
/// experiment reports.
pub fn format_metrics_row(label: &str, mse: f64, mae: f64, mape: Option<f64>) -> String {
    match mape {
        Some(m) => format!("{label}  {mse:.4}  {mae:.4}  {m:.4}"),
        None => format!("{label}  {mse:.4}  {mae:.4}  -"),
    }
}
