//! Evaluation measures: RMSE/MAE/MAPE for regression, accuracy and
//! macro-averaged precision/recall/F1 for classification.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Evaluation results for one split.
#[derive(Debug, Clone, PartialEq)]
pub enum Metrics {
    Regression {
        rmse: f64,
        mae: f64,
        mape: f64,
        count: usize,
    },
    Classification {
        acc: f64,
        precision: f64,
        recall: f64,
        f1: f64,
        count: usize,
    },
}

impl Metrics {
    pub fn count(&self) -> usize {
        match self {
            Metrics::Regression { count, .. } => *count,
            Metrics::Classification { count, .. } => *count,
        }
    }

    pub fn csv_header(&self) -> &'static str {
        match self {
            Metrics::Regression { .. } => "rmse,mae,mape,count",
            Metrics::Classification { .. } => "acc,precision,recall,f1,count",
        }
    }

    pub fn csv_row(&self) -> String {
        match self {
            Metrics::Regression {
                rmse,
                mae,
                mape,
                count,
            } => format!("{},{},{},{}", rmse, mae, mape, count),
            Metrics::Classification {
                acc,
                precision,
                recall,
                f1,
                count,
            } => format!("{},{},{},{},{}", acc, precision, recall, f1, count),
        }
    }

    pub fn table(&self) -> String {
        match self {
            Metrics::Regression {
                rmse,
                mae,
                mape,
                count,
            } => format!(
                "  rmse  {:>12.6}\n  mae   {:>12.6}\n  mape  {:>12.6}\n  count {:>12}",
                rmse, mae, mape, count
            ),
            Metrics::Classification {
                acc,
                precision,
                recall,
                f1,
                count,
            } => format!(
                "  acc       {:>10.6}\n  precision {:>10.6}\n  recall    {:>10.6}\n  f1        {:>10.6}\n  count     {:>10}",
                acc, precision, recall, f1, count
            ),
        }
    }
}

fn check_pairs(pred: &[Tensor], target: &[Tensor]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::contract("metrics: empty input"));
    }
    if pred.len() != target.len() {
        return Err(Error::contract(format!(
            "metrics: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    for (p, t) in pred.iter().zip(target) {
        if p.shape() != t.shape() {
            return Err(Error::dim(format!(
                "metrics: prediction {} vs target {}",
                p.shape(),
                t.shape()
            )));
        }
    }
    Ok(())
}

/// Root mean squared error pooled over all instances and output coordinates.
pub fn rmse(pred: &[Tensor], target: &[Tensor]) -> Result<f64> {
    check_pairs(pred, target)?;
    let mut sq = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(target) {
        for (a, b) in p.data().iter().zip(t.data()) {
            sq += (a - b) * (a - b);
            n += 1;
        }
    }
    Ok((sq / n as f64).sqrt())
}

/// Mean absolute error pooled over all instances and output coordinates.
pub fn mae(pred: &[Tensor], target: &[Tensor]) -> Result<f64> {
    check_pairs(pred, target)?;
    let mut abs = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(target) {
        for (a, b) in p.data().iter().zip(t.data()) {
            abs += (a - b).abs();
            n += 1;
        }
    }
    Ok(abs / n as f64)
}

/// Mean absolute percentage error (in percent); `floor` guards zero targets.
pub fn mape(pred: &[Tensor], target: &[Tensor], floor: f64) -> Result<f64> {
    check_pairs(pred, target)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(target) {
        for (a, b) in p.data().iter().zip(t.data()) {
            total += (a - b).abs() / b.abs().max(floor);
            n += 1;
        }
    }
    Ok(total / n as f64 * 100.0)
}

pub const MAPE_FLOOR: f64 = 1e-8;

pub fn regression_metrics(pred: &[Tensor], target: &[Tensor]) -> Result<Metrics> {
    Ok(Metrics::Regression {
        rmse: rmse(pred, target)?,
        mae: mae(pred, target)?,
        mape: mape(pred, target, MAPE_FLOOR)?,
        count: pred.len(),
    })
}

/// Accuracy plus macro-averaged precision/recall/F1. Every class in
/// [0, n_classes) contributes to the macro average; a class with no
/// predictions (or no true instances) scores 0 on the affected measure
/// rather than being skipped.
pub fn classification_scores(
    pred_classes: &[usize],
    target_classes: &[usize],
    n_classes: usize,
) -> Result<Metrics> {
    if pred_classes.is_empty() {
        return Err(Error::contract("metrics: empty input"));
    }
    if pred_classes.len() != target_classes.len() {
        return Err(Error::contract(format!(
            "metrics: {} predictions vs {} targets",
            pred_classes.len(),
            target_classes.len()
        )));
    }
    if n_classes == 0 {
        return Err(Error::contract("metrics: n_classes must be positive"));
    }
    for &c in pred_classes.iter().chain(target_classes) {
        if c >= n_classes {
            return Err(Error::contract(format!(
                "metrics: label {} out of range [0, {})",
                c, n_classes
            )));
        }
    }

    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    let mut correct = 0usize;
    for (&p, &t) in pred_classes.iter().zip(target_classes) {
        if p == t {
            correct += 1;
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }

    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    for c in 0..n_classes {
        let p_den = tp[c] + fp[c];
        let r_den = tp[c] + fn_[c];
        let p = if p_den > 0 { tp[c] as f64 / p_den as f64 } else { 0.0 };
        let r = if r_den > 0 { tp[c] as f64 / r_den as f64 } else { 0.0 };
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        precision_sum += p;
        recall_sum += r;
        f1_sum += f1;
    }
    let k = n_classes as f64;
    Ok(Metrics::Classification {
        acc: correct as f64 / pred_classes.len() as f64,
        precision: precision_sum / k,
        recall: recall_sum / k,
        f1: f1_sum / k,
        count: pred_classes.len(),
    })
}
