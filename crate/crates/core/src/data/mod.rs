//! Multimodal datasets on a shared time grid: CSV ingestion, event alignment,
//! missingness injection, baseline imputation, scaling and the synthetic
//! benchmark generator.

mod impute;
mod io;
mod missing;
mod scale;
mod synth;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::completion::{Modality, ModalityBatch};
use crate::numerics::{Mask, Matrix};

pub use impute::{impute_baseline, ImputeMethod, Imputed};
pub use io::{
    align_events, load_dataset_dir, load_events_csv, load_series_csv, write_dataset_csv,
    EventSeries, RawSeries,
};
pub use missing::{apply_missingness, Mechanism, MissingnessSpec};
pub use scale::MinMaxScaler;
pub use synth::{
    bars_and_stripes, synth_generate, synth_instruments, SyntheticData, SyntheticSpec,
};

/// Grid or event instant: an integer index or an ISO-8601 date/date-time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Timestamp {
    Index(i64),
    Date(chrono::NaiveDateTime),
}

impl Timestamp {
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        if let Ok(i) = text.parse::<i64>() {
            return Some(Timestamp::Index(i));
        }
        if let Ok(d) = chrono::NaiveDate::parse_from_str(text, "%Y-%m-%d") {
            return d.and_hms_opt(0, 0, 0).map(Timestamp::Date);
        }
        [
            "%Y-%m-%dT%H:%M:%S%.f",
            "%Y-%m-%d %H:%M:%S%.f",
            "%Y-%m-%dT%H:%M",
        ]
        .iter()
        .find_map(|f| chrono::NaiveDateTime::parse_from_str(text, f).ok())
        .map(Timestamp::Date)
        .or_else(|| {
            chrono::DateTime::parse_from_rfc3339(text)
                .ok()
                .map(|d| Timestamp::Date(d.naive_utc()))
        })
    }

    fn same_kind(&self, other: &Timestamp) -> bool {
        matches!(
            (self, other),
            (Timestamp::Index(_), Timestamp::Index(_)) | (Timestamp::Date(_), Timestamp::Date(_))
        )
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Timestamp::Index(i) => write!(f, "{i}"),
            Timestamp::Date(d) if d.time() == chrono::NaiveTime::MIN => write!(f, "{}", d.date()),
            Timestamp::Date(d) => write!(f, "{}", d.format("%Y-%m-%dT%H:%M:%S")),
        }
    }
}

/// Both modalities on one regular grid. Unobserved entries hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedDataset {
    pub timestamps: Vec<Timestamp>,
    pub x: Matrix,
    pub x_mask: Mask,
    pub y: Matrix,
    pub y_mask: Mask,
    pub x_names: Vec<String>,
    pub y_names: Vec<String>,
}

impl AlignedDataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_x(&self) -> usize {
        self.x.cols()
    }

    pub fn d_y(&self) -> usize {
        self.y.cols()
    }

    pub fn values(&self, modality: Modality) -> (&Matrix, &Mask) {
        match modality {
            Modality::X => (&self.x, &self.x_mask),
            Modality::Y => (&self.y, &self.y_mask),
        }
    }

    pub(crate) fn values_mut(&mut self, modality: Modality) -> (&mut Matrix, &mut Mask) {
        match modality {
            Modality::X => (&mut self.x, &mut self.x_mask),
            Modality::Y => (&mut self.y, &mut self.y_mask),
        }
    }

    pub fn batch(&self, modality: Modality) -> ModalityBatch {
        let (values, mask) = self.values(modality);
        ModalityBatch {
            values: values.clone(),
            mask: mask.clone(),
            modality,
        }
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            timestamps: self.timestamps[start..end].to_vec(),
            x: self.x.slice_rows(start, end),
            x_mask: self.x_mask.slice_rows(start, end),
            y: self.y.slice_rows(start, end),
            y_mask: self.y_mask.slice_rows(start, end),
            x_names: self.x_names.clone(),
            y_names: self.y_names.clone(),
        }
    }

    /// `[x | y]`, the feature matrix seen by downstream predictors.
    pub fn features(&self) -> Matrix {
        Matrix::concat_cols(&[&self.x, &self.y]).expect("modalities share the grid")
    }

    pub fn is_complete(&self) -> bool {
        self.x_mask.count_missing() == 0 && self.y_mask.count_missing() == 0
    }
}

/// Downstream task of a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Next-step value of the target column of x.
    #[default]
    Regression,
    /// Per-step class label.
    Classification,
}
