use serde::{Deserialize, Serialize};

use super::AlignedDataset;
use crate::completion::Modality;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Mask, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingnessSpec {
    pub mechanism: Mechanism,
    pub rate: f64,
    pub seed: u64,
    /// Modality whose entries are dropped.
    #[serde(default = "default_modality")]
    pub modality: Modality,
}

fn default_modality() -> Modality {
    Modality::Y
}

impl Default for MissingnessSpec {
    /// Half of the y entries missing completely at random.
    fn default() -> Self {
        Self::mcar(0.5, 13)
    }
}

impl MissingnessSpec {
    pub fn mcar(rate: f64, seed: u64) -> Self {
        Self {
            mechanism: Mechanism::Mcar,
            rate,
            seed,
            modality: Modality::Y,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Config(format!(
                "missingness rate {} is outside [0, 1]",
                self.rate
            )));
        }
        Ok(())
    }
}

/// Per-column mean and population standard deviation over observed entries.
fn column_stats(values: &Matrix, mask: &Mask) -> Vec<(f64, f64)> {
    (0..values.cols())
        .map(|j| {
            let obs: Vec<f64> = (0..values.rows())
                .filter(|&i| mask.get(i, j))
                .map(|i| values[(i, j)])
                .collect();
            if obs.is_empty() {
                return (0.0, 1.0);
            }
            let mean = obs.iter().sum::<f64>() / obs.len() as f64;
            let var = obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / obs.len() as f64;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            (mean, std)
        })
        .collect()
}

/// Mean absolute z-score of each row's observed entries (0 for empty rows).
fn row_scores(values: &Matrix, mask: &Mask) -> Vec<f64> {
    let stats = column_stats(values, mask);
    (0..values.rows())
        .map(|i| {
            let (sum, n) =
                (0..values.cols())
                    .filter(|&j| mask.get(i, j))
                    .fold((0.0, 0usize), |(s, n), j| {
                        let (m, sd) = stats[j];
                        (s + ((values[(i, j)] - m) / sd).abs(), n + 1)
                    });
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        })
        .collect()
}

/// Offset `a` with `mean σ(a + sᵢ) = rate`, found by bisection.
fn calibrate(scores: &[f64], rate: f64) -> f64 {
    let mean_prob =
        |a: f64| scores.iter().map(|s| sigmoid(a + s)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Drops observed entries of `spec.modality`.
///
/// MCAR drops each entry with probability `rate`. MAR and MNAR drop with
/// probability `σ(a + |z|)`, where `z` is the mean absolute z-score of the
/// other modality's observed entries on that row (MAR) or the entry's own
/// z-score (MNAR), and `a` is calibrated so the mean drop probability over
/// currently observed entries equals `rate`. One uniform is drawn per entry
/// of the modality in row-major order, observed or not. Dropped entries are
/// zeroed.
pub fn apply_missingness(
    data: &AlignedDataset,
    spec: &MissingnessSpec,
    rng: &mut Rng,
) -> Result<AlignedDataset> {
    spec.validate()?;
    let mut out = data.clone();
    let other = match spec.modality {
        Modality::X => Modality::Y,
        Modality::Y => Modality::X,
    };
    let (values, mask) = data.values(spec.modality);
    let (rows, cols) = (values.rows(), values.cols());

    let probs: Vec<f64> = match spec.mechanism {
        Mechanism::Mcar => vec![spec.rate; rows * cols],
        _ if spec.rate == 0.0 || spec.rate == 1.0 => vec![spec.rate; rows * cols],
        mechanism => {
            let scores: Vec<f64> = if mechanism == Mechanism::Mar {
                let (ov, om) = data.values(other);
                let per_row = row_scores(ov, om);
                (0..rows * cols).map(|k| per_row[k / cols.max(1)]).collect()
            } else {
                let stats = column_stats(values, mask);
                (0..rows * cols)
                    .map(|k| {
                        let (i, j) = (k / cols, k % cols);
                        ((values[(i, j)] - stats[j].0) / stats[j].1).abs()
                    })
                    .collect()
            };
            let observed: Vec<f64> = scores
                .iter()
                .zip(mask.as_slice())
                .filter(|(_, &m)| m)
                .map(|(s, _)| *s)
                .collect();
            if observed.is_empty() {
                vec![0.0; rows * cols]
            } else {
                let a = calibrate(&observed, spec.rate);
                scores.iter().map(|s| sigmoid(a + s)).collect()
            }
        }
    };

    let (out_values, out_mask) = out.values_mut(spec.modality);
    for i in 0..rows {
        for j in 0..cols {
            let u = rng.uniform();
            if out_mask.get(i, j) && u < probs[i * cols + j] {
                out_mask.set(i, j, false);
                out_values[(i, j)] = 0.0;
            }
        }
    }
    Ok(out)
}
