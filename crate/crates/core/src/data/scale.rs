use crate::error::{Error, Result};
use crate::numerics::{Mask, Matrix};

/// Per-column affine map onto `[0, 1]` fitted on observed training entries.
/// Constant or unobserved columns map with unit range.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Fits on observed entries of the first `rows` rows.
    pub fn fit(values: &Matrix, mask: &Mask, rows: usize) -> Self {
        let rows = rows.min(values.rows());
        let (mut min, mut max) = (Vec::new(), Vec::new());
        for j in 0..values.cols() {
            let (lo, hi) = (0..rows)
                .filter(|&i| mask.get(i, j))
                .map(|i| values[(i, j)])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            if lo.is_finite() {
                min.push(lo);
                max.push(hi);
            } else {
                min.push(0.0);
                max.push(1.0);
            }
        }
        Self { min, max }
    }

    fn range(&self, j: usize) -> f64 {
        let r = self.max[j] - self.min[j];
        if r > 0.0 {
            r
        } else {
            1.0
        }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Scales observed entries; unobserved entries stay 0.
    pub fn transform(&self, values: &Matrix, mask: &Mask) -> Matrix {
        Matrix::from_fn(values.rows(), values.cols(), |i, j| {
            if mask.get(i, j) {
                (values[(i, j)] - self.min[j]) / self.range(j)
            } else {
                0.0
            }
        })
    }

    pub fn inverse(&self, values: &Matrix) -> Matrix {
        Matrix::from_fn(values.rows(), values.cols(), |i, j| {
            self.inverse_value(j, values[(i, j)])
        })
    }

    pub fn inverse_value(&self, column: usize, v: f64) -> f64 {
        self.min[column] + v * self.range(column)
    }

    pub fn to_tensors(&self) -> (Matrix, Matrix) {
        (Matrix::row_vector(&self.min), Matrix::row_vector(&self.max))
    }

    pub fn from_tensors(min: &Matrix, max: &Matrix) -> Result<Self> {
        if min.rows() != 1 || min.shape() != max.shape() {
            return Err(Error::Data(format!(
                "scaler tensors have shapes {} and {}",
                min.shape(),
                max.shape()
            )));
        }
        Ok(Self {
            min: min.as_slice().to_vec(),
            max: max.as_slice().to_vec(),
        })
    }
}
