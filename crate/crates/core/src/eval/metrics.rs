use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default guard below which an actual value is left out of MAPE.
pub const MAPE_EPS: f64 = 1e-8;

fn check_lengths(pred: &[f64], actual: &[f64], op: &str) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(Error::Data(format!(
            "{op}: {} predictions for {} actual values",
            pred.len(),
            actual.len()
        )));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_lengths(pred, actual, "rmse")?;
    if pred.is_empty() {
        return Err(Error::Degenerate("rmse of empty vectors".into()));
    }
    let sse: f64 = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (a - p) * (a - p))
        .sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Mean absolute percentage error as a fraction, with the number of entries
/// skipped because `|actual| ≤ eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mape {
    pub value: f64,
    pub excluded: usize,
}

pub fn mape(pred: &[f64], actual: &[f64], eps: f64) -> Result<Mape> {
    check_lengths(pred, actual, "mape")?;
    let kept: Vec<f64> = pred
        .iter()
        .zip(actual)
        .filter(|(_, a)| a.abs() > eps)
        .map(|(p, a)| (a - p).abs() / a.abs())
        .collect();
    if kept.is_empty() {
        return Err(Error::Degenerate(format!(
            "all {} actual values are within {eps} of zero",
            actual.len()
        )));
    }
    Ok(Mape {
        value: kept.iter().sum::<f64>() / kept.len() as f64,
        excluded: actual.len() - kept.len(),
    })
}

/// F1 and accuracy. Two classes score the F1 of class 1; more classes use
/// the unweighted mean of per-class F1, where a class that is neither
/// predicted nor present scores 0.
pub fn f1_accuracy(pred: &[usize], truth: &[usize], classes: usize) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::Data(format!(
            "{} predicted labels for {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Degenerate("f1 of empty label vectors".into()));
    }
    if classes < 2 {
        return Err(Error::Config(format!(
            "f1 needs at least 2 classes, got {classes}"
        )));
    }
    if let Some(bad) = pred.iter().chain(truth).find(|&&l| l >= classes) {
        return Err(Error::Data(format!(
            "label {bad} is outside [0, {classes})"
        )));
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fne = vec![0usize; classes];
    let mut correct = 0;
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fne[t] += 1;
        }
    }
    let f1_of = |c: usize| {
        let denom = 2 * tp[c] + fp[c] + fne[c];
        if denom == 0 {
            0.0
        } else {
            2.0 * tp[c] as f64 / denom as f64
        }
    };
    let f1 = if classes == 2 {
        f1_of(1)
    } else {
        (0..classes).map(f1_of).sum::<f64>() / classes as f64
    };
    Ok((f1, correct as f64 / pred.len() as f64))
}

/// `1` where the next value is at least the current one, else `0`.
pub fn movement_labels(series: &[f64]) -> Result<Vec<usize>> {
    if series.len() < 2 {
        return Err(Error::Degenerate(format!(
            "movement labels need at least 2 values, got {}",
            series.len()
        )));
    }
    Ok(series
        .windows(2)
        .map(|w| (w[1] - w[0] >= 0.0) as usize)
        .collect())
}

/// Downstream scores of one run. Error metrics are absent for classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: Option<f64>,
    pub mape: Option<f64>,
    pub mape_excluded: usize,
    pub f1: f64,
    pub accuracy: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub config_hash: String,
}
