//! Dense linear algebra, activations, normalisation and seeded sampling.

mod matrix;
mod rng;

pub use matrix::{
    bernoulli_sample, elementwise, layer_norm_rows, matmul, matmul_at, matmul_bt, sigmoid,
    softmax_rows, softplus, Activation, Matrix,
};
pub use rng::{derive_seed, Rng};

/// Boolean matrix, row-major; `true` marks an observed entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn all(rows: usize, cols: usize, value: bool) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), rows * cols, "mask buffer length");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count_observed(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn count_missing(&self) -> usize {
        self.data.len() - self.count_observed()
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Mask {
        Mask {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// 1.0 where observed, 0.0 elsewhere.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(
            self.rows,
            self.cols,
            |i, j| if self.get(i, j) { 1.0 } else { 0.0 },
        )
    }
}
