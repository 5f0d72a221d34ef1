use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Lower bound applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Which modal reconstruction terms enter the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSwitches {
    pub use_modal_x: bool,
    pub use_modal_y: bool,
}

impl Default for LossSwitches {
    fn default() -> Self {
        Self {
            use_modal_x: true,
            use_modal_y: true,
        }
    }
}

pub(crate) fn check_one_hot(labels: &Matrix) -> Result<()> {
    for i in 0..labels.rows() {
        let row = labels.row(i);
        let ones = row.iter().filter(|v| **v == 1.0).count();
        let zeros = row.iter().filter(|v| **v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Data(format!("label row {i} is not one-hot")));
        }
    }
    Ok(())
}

/// Mean cross-entropy `−(1/N) Σ Σ y log max(p, 1e-12)`.
pub fn task_loss_classification(probs: &Matrix, labels: &Matrix) -> Result<f64> {
    if probs.shape() != labels.shape() {
        return Err(Error::shape(
            "task_loss_classification",
            probs.shape(),
            labels.shape(),
        ));
    }
    check_one_hot(labels)?;
    if probs.rows() == 0 {
        return Err(Error::Degenerate("no samples".into()));
    }
    let total: f64 = probs
        .as_slice()
        .iter()
        .zip(labels.as_slice())
        .filter(|(_, y)| **y == 1.0)
        .map(|(p, _)| -p.max(PROB_FLOOR).ln())
        .sum();
    Ok(total / probs.rows() as f64)
}

/// Mean squared error over samples.
pub fn task_loss_regression(pred: &Matrix, actual: &Matrix) -> Result<f64> {
    if pred.shape() != actual.shape() {
        return Err(Error::shape(
            "task_loss_regression",
            pred.shape(),
            actual.shape(),
        ));
    }
    if pred.is_empty() {
        return Err(Error::Degenerate("no samples".into()));
    }
    let sse: f64 = pred
        .as_slice()
        .iter()
        .zip(actual.as_slice())
        .map(|(p, a)| (a - p) * (a - p))
        .sum();
    Ok(sse / pred.len() as f64)
}

/// Sum of the enabled terms; the task term is always included.
pub fn total_loss(l_modal_x: f64, l_modal_y: f64, l_task: f64, switches: LossSwitches) -> f64 {
    let mut total = 0.0;
    if switches.use_modal_x {
        total += l_modal_x;
    }
    if switches.use_modal_y {
        total += l_modal_y;
    }
    total + l_task
}
