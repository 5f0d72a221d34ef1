use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AlignedDataset;
use crate::completion::Modality;
use crate::error::{Error, Result};
use crate::numerics::{Mask, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ImputeMethod {
    Zero,
    Locf,
    Nocb,
    Mean,
    Interp,
    /// Mean of the last `w` observed values.
    Rolling(usize),
}

impl fmt::Display for ImputeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImputeMethod::Zero => f.write_str("zero"),
            ImputeMethod::Locf => f.write_str("locf"),
            ImputeMethod::Nocb => f.write_str("nocb"),
            ImputeMethod::Mean => f.write_str("mean"),
            ImputeMethod::Interp => f.write_str("interp"),
            ImputeMethod::Rolling(w) => write!(f, "rolling({w})"),
        }
    }
}

impl FromStr for ImputeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "zero" => ImputeMethod::Zero,
            "locf" => ImputeMethod::Locf,
            "nocb" => ImputeMethod::Nocb,
            "mean" => ImputeMethod::Mean,
            "interp" => ImputeMethod::Interp,
            _ => {
                let w = s
                    .strip_prefix("rolling(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|w| w.parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown imputation method `{s}`")))?;
                if w == 0 {
                    return Err(Error::Config("rolling window must be at least 1".into()));
                }
                ImputeMethod::Rolling(w)
            }
        })
    }
}

impl TryFrom<String> for ImputeMethod {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ImputeMethod> for String {
    fn from(m: ImputeMethod) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Imputed {
    pub data: AlignedDataset,
    /// One record per column that had no observed entries and was zero-filled.
    pub warnings: Vec<String>,
}

fn fill_column(column: &[Option<f64>], method: ImputeMethod) -> Vec<f64> {
    let observed: Vec<(usize, f64)> = column
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    let mean = observed.iter().map(|(_, v)| v).sum::<f64>() / observed.len() as f64;
    let n = column.len();
    let mut out: Vec<f64> = column.iter().map(|v| v.unwrap_or(0.0)).collect();

    match method {
        ImputeMethod::Zero => {}
        ImputeMethod::Mean => {
            for (o, v) in out.iter_mut().zip(column) {
                if v.is_none() {
                    *o = mean;
                }
            }
        }
        ImputeMethod::Locf => {
            let mut last = None;
            for i in 0..n {
                match column[i] {
                    Some(v) => last = Some(v),
                    None => out[i] = last.unwrap_or(mean),
                }
            }
        }
        ImputeMethod::Nocb => {
            let mut next = None;
            for i in (0..n).rev() {
                match column[i] {
                    Some(v) => next = Some(v),
                    None => out[i] = next.unwrap_or(mean),
                }
            }
        }
        ImputeMethod::Interp => {
            // `observed` is sorted by index, so each gap lies between two
            // consecutive observations or beyond the first/last one.
            let mut k = 0;
            for i in 0..n {
                if column[i].is_some() {
                    continue;
                }
                while k < observed.len() && observed[k].0 < i {
                    k += 1;
                }
                out[i] = match (k.checked_sub(1).map(|p| observed[p]), observed.get(k)) {
                    (Some((i0, v0)), Some(&(i1, v1))) => {
                        v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
                    }
                    (Some((_, v0)), None) => v0,
                    (None, Some(&(_, v1))) => v1,
                    (None, None) => 0.0,
                };
            }
        }
        ImputeMethod::Rolling(w) => {
            let mut window: std::collections::VecDeque<f64> = std::collections::VecDeque::new();
            for i in 0..n {
                match column[i] {
                    Some(v) => {
                        window.push_back(v);
                        if window.len() > w {
                            window.pop_front();
                        }
                    }
                    None if window.is_empty() => out[i] = mean,
                    None => out[i] = window.iter().sum::<f64>() / window.len() as f64,
                }
            }
        }
    }
    out
}

/// Fills every unobserved entry of both modalities column by column and marks
/// all entries observed.
pub fn impute_baseline(data: &AlignedDataset, method: ImputeMethod) -> Result<Imputed> {
    if let ImputeMethod::Rolling(0) = method {
        return Err(Error::Config("rolling window must be at least 1".into()));
    }
    let mut out = data.clone();
    let mut warnings = Vec::new();
    for modality in [Modality::X, Modality::Y] {
        let (values, mask) = data.values(modality);
        let names = match modality {
            Modality::X => &data.x_names,
            Modality::Y => &data.y_names,
        };
        let mut filled = Matrix::zeros(values.rows(), values.cols());
        for j in 0..values.cols() {
            let column: Vec<Option<f64>> = (0..values.rows())
                .map(|i| mask.get(i, j).then(|| values[(i, j)]))
                .collect();
            let col = if column.iter().all(Option::is_none) {
                if !column.is_empty() {
                    let name = names.get(j).cloned().unwrap_or_else(|| j.to_string());
                    warnings.push(format!(
                        "column {name} of modality {} has no observed entries; filled with 0",
                        modality.name()
                    ));
                }
                vec![0.0; column.len()]
            } else {
                fill_column(&column, method)
            };
            for (i, v) in col.into_iter().enumerate() {
                filled[(i, j)] = v;
            }
        }
        let (ov, om) = out.values_mut(modality);
        *ov = filled;
        *om = Mask::all(values.rows(), values.cols(), true);
    }
    Ok(Imputed {
        data: out,
        warnings,
    })
}
