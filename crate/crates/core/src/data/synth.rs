use serde::{Deserialize, Serialize};

use super::{AlignedDataset, Timestamp};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Mask, Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    /// Grid length.
    pub t: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub instruments: usize,
    /// AR(1) coefficient of the latent state.
    pub ar_coef: f64,
    /// Standard deviation of the observation noise on both modalities.
    pub noise: f64,
    pub classes: usize,
    pub latent_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            t: 400,
            d_x: 4,
            d_y: 6,
            instruments: 10,
            ar_coef: 0.9,
            noise: 0.3,
            classes: 5,
            latent_dim: 2,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.t < 8 {
            return fail(format!("synthetic length {} is below 8", self.t));
        }
        if !(self.ar_coef > -1.0 && self.ar_coef < 1.0) {
            return fail(format!(
                "AR coefficient {} is outside (-1, 1)",
                self.ar_coef
            ));
        }
        if self.d_x == 0 || self.d_y == 0 || self.latent_dim == 0 || self.instruments == 0 {
            return fail("synthetic dimensions and instrument count must be positive".into());
        }
        if self.classes < 2 {
            return fail(format!("class count {} is below 2", self.classes));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail(format!("noise scale {} is invalid", self.noise));
        }
        Ok(())
    }
}

/// One generated instrument with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub instrument: usize,
    pub seed: u64,
    /// Fully observed; apply missingness separately.
    pub dataset: AlignedDataset,
    pub latent: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub target_col: usize,
}

/// Generates one instrument from its own derived seed.
///
/// With `u_t` the unit-variance latent `z_t·√(1−φ²)`, where
/// `z_t = φ·z_{t−1} + ε_t`, the modalities are
/// `x_t = level + A·u_t + noise·n` and `y_t = tanh(B·u_t/√L + noise·n)`.
/// Column 0 of x is the target; `level` keeps it positive. Labels are
/// quantile bins of the first latent coordinate.
///
/// Draw order: `A` then `B` (row-major gaussians), the initial state, then per
/// step the latent innovations, the x noise and the y noise.
pub fn synth_generate(spec: &SyntheticSpec, instrument: usize) -> Result<SyntheticData> {
    spec.validate()?;
    let seed = derive_seed(spec.seed, instrument as u64);
    let mut rng = Rng::new(seed);
    let (t_len, l) = (spec.t, spec.latent_dim);
    let phi = spec.ar_coef;
    let norm = (1.0 - phi * phi).sqrt();

    let a = Matrix::randn(spec.d_x, l, 1.0, &mut rng);
    let b = Matrix::randn(spec.d_y, l, 1.0, &mut rng);
    let level: Vec<f64> = (0..spec.d_x)
        .map(|j| {
            let loading = a.row(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            1.0 + 4.0 * (loading + spec.noise)
        })
        .collect();

    let mut z: Vec<f64> = (0..l).map(|_| rng.gaussian() / norm).collect();
    let mut latent = Matrix::zeros(t_len, l);
    let mut x = Matrix::zeros(t_len, spec.d_x);
    let mut y = Matrix::zeros(t_len, spec.d_y);
    let y_scale = 1.0 / (l as f64).sqrt();
    for t in 0..t_len {
        if t > 0 {
            for zk in z.iter_mut() {
                *zk = phi * *zk + rng.gaussian();
            }
        }
        let u: Vec<f64> = z.iter().map(|v| v * norm).collect();
        latent.row_mut(t).copy_from_slice(&u);
        for j in 0..spec.d_x {
            let signal: f64 = a.row(j).iter().zip(&u).map(|(w, v)| w * v).sum();
            x[(t, j)] = level[j] + signal + spec.noise * rng.gaussian();
        }
        for j in 0..spec.d_y {
            let signal: f64 = b.row(j).iter().zip(&u).map(|(w, v)| w * v).sum();
            y[(t, j)] = (signal * y_scale + spec.noise * rng.gaussian()).tanh();
        }
    }

    let labels = quantile_labels(&latent.column(0), spec.classes);
    let dataset = AlignedDataset {
        timestamps: (0..t_len as i64).map(Timestamp::Index).collect(),
        x,
        x_mask: Mask::all(t_len, spec.d_x, true),
        y,
        y_mask: Mask::all(t_len, spec.d_y, true),
        x_names: (0..spec.d_x).map(|j| format!("x{j}")).collect(),
        y_names: (0..spec.d_y).map(|j| format!("f{j}")).collect(),
    };
    Ok(SyntheticData {
        instrument,
        seed,
        dataset,
        latent,
        labels,
        classes: spec.classes,
        target_col: 0,
    })
}

pub fn synth_instruments(spec: &SyntheticSpec) -> Result<Vec<SyntheticData>> {
    (0..spec.instruments)
        .map(|i| synth_generate(spec, i))
        .collect()
}

/// Class `k` holds values between the `k/C` and `(k+1)/C` empirical quantiles.
fn quantile_labels(values: &[f64], classes: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let cuts: Vec<f64> = (1..classes)
        .map(|k| sorted[(k * n / classes).min(n - 1)])
        .collect();
    values
        .iter()
        .map(|v| cuts.iter().filter(|c| v >= c).count())
        .collect()
}

/// All `n×n` binary images whose rows are uniformly on or off (stripes) or
/// whose columns are (bars), flattened row-major and deduplicated:
/// `2^(n+1) − 2` patterns, stripes first in bitmask order, then bars.
pub fn bars_and_stripes(n: usize) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for bars in [false, true] {
        for bits in 0..1usize << n {
            let image: Vec<f64> = (0..n * n)
                .map(|k| {
                    let line = if bars { k % n } else { k / n };
                    ((bits >> line) & 1) as f64
                })
                .collect();
            if !rows.contains(&image) {
                rows.push(image);
            }
        }
    }
    Matrix::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_white_latent_gives_exact_images() {
        let spec = SyntheticSpec {
            t: 50,
            noise: 0.0,
            ar_coef: 0.0,
            ..SyntheticSpec::default()
        };
        let d = synth_generate(&spec, 0).unwrap();
        // x is affine in the latent: differences of x are linear in latent
        // differences with the same loadings on every step.
        let x = &d.dataset.x;
        let u = &d.latent;
        let lhs = |t: usize| x[(t, 0)] - x[(0, 0)];
        let du = |t: usize, k: usize| u[(t, k)] - u[(0, k)];
        // Solve the 2×2 system from steps 1 and 2, then check the remaining steps.
        let det = du(1, 0) * du(2, 1) - du(1, 1) * du(2, 0);
        let w0 = (lhs(1) * du(2, 1) - du(1, 1) * lhs(2)) / det;
        let w1 = (du(1, 0) * lhs(2) - lhs(1) * du(2, 0)) / det;
        for t in 3..50 {
            assert!((lhs(t) - (w0 * du(t, 0) + w1 * du(t, 1))).abs() < 1e-9);
        }
        assert!(d.dataset.y.as_slice().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec {
            t: 30,
            ..SyntheticSpec::default()
        };
        assert_eq!(
            synth_generate(&spec, 3).unwrap(),
            synth_generate(&spec, 3).unwrap()
        );
    }

    #[test]
    fn instruments_use_distinct_seeds() {
        let spec = SyntheticSpec {
            t: 20,
            ..SyntheticSpec::default()
        };
        let all = synth_instruments(&spec).unwrap();
        assert_eq!(all.len(), 10);
        let mut seeds: Vec<u64> = all.iter().map(|d| d.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 10);
        assert_ne!(all[0].dataset.x, all[1].dataset.x);
    }

    #[test]
    fn target_stays_positive_and_labels_are_balanced() {
        let spec = SyntheticSpec::default();
        let d = synth_generate(&spec, 0).unwrap();
        assert!(d.dataset.x.column(0).iter().all(|v| *v > 0.0));
        let mut counts = vec![0; spec.classes];
        for &l in &d.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c == 80), "{counts:?}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = SyntheticSpec {
            ar_coef: 1.0,
            ..SyntheticSpec::default()
        };
        assert!(bad.validate().is_err());
        let short = SyntheticSpec {
            t: 7,
            ..SyntheticSpec::default()
        };
        assert!(short.validate().is_err());
    }

    #[test]
    fn bars_and_stripes_counts() {
        let p = bars_and_stripes(3);
        assert_eq!((p.rows(), p.cols()), (14, 9));
        assert_eq!(p.row(1), &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.row(8), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(bars_and_stripes(2).rows(), 6);
    }
}
