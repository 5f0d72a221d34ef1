use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{f1_accuracy, mape, movement_labels, rmse, Metrics, MAPE_EPS};
use crate::completion::{CompletionOutput, Modality};
use crate::data::{
    apply_missingness, impute_baseline, synth_generate, AlignedDataset, ImputeMethod, MinMaxScaler,
    MissingnessSpec, SyntheticSpec, TaskKind,
};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Mask, Matrix, Rng};
use crate::training::{
    complete_series, fine_tune, pretrain, streams, train_downstream, DownstreamData,
    DownstreamTask, EpochLoss, McDbn, PreparedData, TaskTargets, TrainConfig,
};

/// How missing entries are handled before the downstream predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// Downstream on x alone, forward-filled where x has gaps.
    SingleModal,
    Baseline(ImputeMethod),
    McDbn,
}

impl Method {
    /// Row name in comparison tables.
    pub fn label(&self) -> String {
        match self {
            Method::SingleModal => "Single modal data".into(),
            Method::Baseline(ImputeMethod::Zero) => "Multimodal data w/ Zero Filling".into(),
            Method::Baseline(ImputeMethod::Locf) => "Multimodal data w/ Forward Fill".into(),
            Method::Baseline(ImputeMethod::Mean) => "Multimodal data w/ Mean Imputation".into(),
            Method::Baseline(m) => format!("Multimodal data w/ {m}"),
            Method::McDbn => "MC-DBN".into(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::SingleModal => f.write_str("single"),
            Method::Baseline(m) => m.fmt(f),
            Method::McDbn => f.write_str("mcdbn"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" => Ok(Method::SingleModal),
            "mcdbn" => Ok(Method::McDbn),
            other => other.parse().map(Method::Baseline),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Rows of the main comparison: single modality, zero, forward and mean
/// filling, and MC-DBN.
pub fn comparison_methods() -> Vec<Method> {
    vec![
        Method::SingleModal,
        Method::Baseline(ImputeMethod::Zero),
        Method::Baseline(ImputeMethod::Locf),
        Method::Baseline(ImputeMethod::Mean),
        Method::McDbn,
    ]
}

/// One row of a comparison: a method under a training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub method: Method,
    pub cfg: TrainConfig,
}

/// One instrument with its missingness applied and scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct Instrument {
    pub id: usize,
    /// Fully observed values in original units, when known.
    pub truth: Option<AlignedDataset>,
    /// Values in original units; unobserved entries hold 0.
    pub observed: AlignedDataset,
    /// `observed` mapped to `[0, 1]`.
    pub scaled: AlignedDataset,
    pub scaler_x: MinMaxScaler,
    pub scaler_y: MinMaxScaler,
    /// Per-step class labels.
    pub labels: Option<(Vec<usize>, usize)>,
    pub target_col: usize,
    pub train_rows: usize,
}

impl Instrument {
    /// Scales `observed` with statistics from observed entries of its
    /// training rows.
    pub fn new(
        id: usize,
        observed: AlignedDataset,
        truth: Option<AlignedDataset>,
        labels: Option<(Vec<usize>, usize)>,
        target_col: usize,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        if target_col >= observed.d_x() {
            return Err(Error::Config(format!(
                "target column {target_col} is outside the {} x columns",
                observed.d_x()
            )));
        }
        let train_rows = cfg.train_rows(observed.len());
        let scaler_x = MinMaxScaler::fit(&observed.x, &observed.x_mask, train_rows);
        let scaler_y = MinMaxScaler::fit(&observed.y, &observed.y_mask, train_rows);
        let scaled = AlignedDataset {
            x: scaler_x.transform(&observed.x, &observed.x_mask),
            y: scaler_y.transform(&observed.y, &observed.y_mask),
            ..observed.clone()
        };
        Ok(Self {
            id,
            truth,
            observed,
            scaled,
            scaler_x,
            scaler_y,
            labels,
            target_col,
            train_rows,
        })
    }

    /// Synthetic instrument `id` with missingness seeded per instrument.
    pub fn synthetic(
        spec: &SyntheticSpec,
        id: usize,
        missingness: &MissingnessSpec,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let synth = synth_generate(spec, id)?;
        let mut rng = Rng::new(derive_seed(missingness.seed, id as u64));
        let observed = apply_missingness(&synth.dataset, missingness, &mut rng)?;
        Self::new(
            id,
            observed,
            Some(synth.dataset),
            Some((synth.labels, synth.classes)),
            synth.target_col,
            cfg,
        )
    }

    /// Rescales with scalers fitted elsewhere, such as those stored with a
    /// trained model.
    pub fn with_scalers(mut self, scaler_x: MinMaxScaler, scaler_y: MinMaxScaler) -> Result<Self> {
        if scaler_x.dim() != self.observed.d_x() || scaler_y.dim() != self.observed.d_y() {
            return Err(Error::Data(format!(
                "scalers cover {}+{} columns but the data has {}+{}",
                scaler_x.dim(),
                scaler_y.dim(),
                self.observed.d_x(),
                self.observed.d_y()
            )));
        }
        self.scaled.x = scaler_x.transform(&self.observed.x, &self.observed.x_mask);
        self.scaled.y = scaler_y.transform(&self.observed.y, &self.observed.y_mask);
        self.scaler_x = scaler_x;
        self.scaler_y = scaler_y;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|(_, c)| *c)
    }

    fn targets(&self, task: TaskKind) -> Result<TaskTargets> {
        match task {
            TaskKind::Regression => Ok(TaskTargets::Regression {
                column: self.target_col,
            }),
            TaskKind::Classification => {
                let (labels, classes) = self
                    .labels
                    .clone()
                    .ok_or_else(|| Error::Config("classification needs per-step labels".into()))?;
                Ok(TaskTargets::Classification { labels, classes })
            }
        }
    }

    /// Scaled modalities and targets for MC-DBN training.
    pub fn prepared(&self, task: TaskKind) -> Result<PreparedData> {
        Ok(PreparedData {
            x: self.scaled.batch(Modality::X),
            y: self.scaled.batch(Modality::Y),
            targets: self.targets(task)?,
            train_rows: self.train_rows,
        })
    }
}

/// Builds a model from the configured seed, pretrains it and fine-tunes it on
/// the training rows.
pub fn train_mcdbn(inst: &Instrument, cfg: &TrainConfig) -> Result<(McDbn, Vec<EpochLoss>)> {
    let data = inst.prepared(cfg.task)?;
    let classes = inst.classes().unwrap_or(2);
    let mut rng = Rng::new(derive_seed(cfg.seed, streams::INIT));
    let model = McDbn::new(
        cfg,
        inst.observed.d_x(),
        inst.observed.d_y(),
        classes,
        &mut rng,
    )?;
    let (model, _) = pretrain(&model, &data, cfg)?;
    fine_tune(&model, &data, cfg)
}

/// Completes every row of the instrument with a trained model.
pub fn mcdbn_complete(
    model: &McDbn,
    inst: &Instrument,
    cfg: &TrainConfig,
) -> Result<CompletionOutput> {
    let mut rng = Rng::new(derive_seed(cfg.seed, streams::INFERENCE));
    complete_series(
        &model.completion,
        &inst.scaled.batch(Modality::X),
        &inst.scaled.batch(Modality::Y),
        cfg.batch_size,
        cfg.completion_mode,
        &mut rng,
    )
}

/// Scaled, fully filled modalities produced by one method. Single-modality
/// runs carry no y.
#[derive(Debug, Clone, PartialEq)]
pub struct Completed {
    pub x: Matrix,
    pub y: Option<Matrix>,
}

impl Completed {
    pub fn features(&self) -> Matrix {
        match &self.y {
            Some(y) => Matrix::concat_cols(&[&self.x, y]).expect("modalities share the grid"),
            None => self.x.clone(),
        }
    }

    /// `[x | y]` in original units with observed entries restored exactly.
    pub fn to_dataset(&self, inst: &Instrument) -> AlignedDataset {
        let restore = |filled: &Matrix, scaler: &MinMaxScaler, original: &Matrix, mask: &Mask| {
            Matrix::from_fn(filled.rows(), filled.cols(), |i, j| {
                if mask.get(i, j) {
                    original[(i, j)]
                } else {
                    scaler.inverse_value(j, filled[(i, j)])
                }
            })
        };
        let o = &inst.observed;
        let y = match &self.y {
            Some(y) => restore(y, &inst.scaler_y, &o.y, &o.y_mask),
            None => o.y.clone(),
        };
        AlignedDataset {
            x: restore(&self.x, &inst.scaler_x, &o.x, &o.x_mask),
            x_mask: Mask::all(o.len(), o.d_x(), true),
            y,
            y_mask: Mask::all(o.len(), o.d_y(), self.y.is_some()),
            ..o.clone()
        }
    }
}

/// Fills the instrument's missing entries with `method`; baselines operate on
/// the scaled values.
pub fn complete_with(method: Method, inst: &Instrument, cfg: &TrainConfig) -> Result<Completed> {
    match method {
        Method::SingleModal => {
            let filled = impute_baseline(&inst.scaled, ImputeMethod::Locf)?;
            Ok(Completed {
                x: filled.data.x,
                y: None,
            })
        }
        Method::Baseline(m) => {
            let filled = impute_baseline(&inst.scaled, m)?;
            for w in &filled.warnings {
                log::warn!("instrument {}: {w}", inst.id);
            }
            Ok(Completed {
                x: filled.data.x,
                y: Some(filled.data.y),
            })
        }
        Method::McDbn => {
            let (model, _) = train_mcdbn(inst, cfg)?;
            let out = mcdbn_complete(&model, inst, cfg)?;
            Ok(Completed {
                x: out.completed_x,
                y: Some(out.completed_y),
            })
        }
    }
}

/// RMSE in original units over entries missing from the observation but
/// present in the ground truth.
pub fn completion_rmse(completed: &Completed, inst: &Instrument) -> Result<Option<f64>> {
    let (Some(truth), Some(_)) = (&inst.truth, &completed.y) else {
        return Ok(None);
    };
    let filled = completed.to_dataset(inst);
    let (mut pred, mut actual) = (Vec::new(), Vec::new());
    for (f, t, m) in [
        (&filled.x, &truth.x, &inst.observed.x_mask),
        (&filled.y, &truth.y, &inst.observed.y_mask),
    ] {
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                if !m.get(i, j) {
                    pred.push(f[(i, j)]);
                    actual.push(t[(i, j)]);
                }
            }
        }
    }
    if pred.is_empty() {
        return Ok(None);
    }
    rmse(&pred, &actual).map(Some)
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Trains the downstream predictor on `features` and scores it on the rows
/// after the training split.
///
/// Regression predicts the next value of the target column; predictions are
/// mapped back to original units and the movement F1 compares the predicted
/// and actual direction from the last known value.
pub fn downstream_metrics(
    inst: &Instrument,
    features: &Matrix,
    cfg: &TrainConfig,
    config_hash: &str,
) -> Result<Metrics> {
    let t_len = inst.len();
    let reference = inst.truth.as_ref().unwrap_or(&inst.observed);
    match cfg.task {
        TaskKind::Regression => {
            let series = inst.scaled.x.column(inst.target_col);
            let data = DownstreamData {
                features: features.clone(),
                task: DownstreamTask::NextStep { series },
                train_rows: inst.train_rows,
            };
            let predictor = train_downstream(&data, cfg)?;
            let ends: Vec<usize> = (inst.train_rows - 1..t_len - 1)
                .filter(|&e| {
                    inst.truth.is_some() || inst.observed.x_mask.get(e + 1, inst.target_col)
                })
                .filter(|&e| inst.truth.is_some() || inst.observed.x_mask.get(e, inst.target_col))
                .collect();
            if ends.is_empty() {
                return Err(Error::Data("no held-out steps to score".into()));
            }
            let raw = predictor.predict(features, &ends)?;
            let pred: Vec<f64> = raw
                .as_slice()
                .iter()
                .map(|&v| inst.scaler_x.inverse_value(inst.target_col, v))
                .collect();
            let target = |i: usize| reference.x[(i, inst.target_col)];
            let actual: Vec<f64> = ends.iter().map(|&e| target(e + 1)).collect();
            let mut truth_moves = Vec::with_capacity(ends.len());
            let mut pred_moves = Vec::with_capacity(ends.len());
            for (k, &e) in ends.iter().enumerate() {
                truth_moves.push(movement_labels(&[target(e), actual[k]])?[0]);
                pred_moves.push(movement_labels(&[target(e), pred[k]])?[0]);
            }
            let m = mape(&pred, &actual, MAPE_EPS)?;
            let (f1, accuracy) = f1_accuracy(&pred_moves, &truth_moves, 2)?;
            Ok(Metrics {
                rmse: Some(rmse(&pred, &actual)?),
                mape: Some(m.value),
                mape_excluded: m.excluded,
                f1,
                accuracy,
                n_samples: ends.len(),
                seed: cfg.seed,
                config_hash: config_hash.to_string(),
            })
        }
        TaskKind::Classification => {
            let (labels, classes) = inst
                .labels
                .clone()
                .ok_or_else(|| Error::Config("classification needs per-step labels".into()))?;
            let data = DownstreamData {
                features: features.clone(),
                task: DownstreamTask::Label {
                    labels: labels.clone(),
                    classes,
                },
                train_rows: inst.train_rows,
            };
            let predictor = train_downstream(&data, cfg)?;
            let ends: Vec<usize> =
                (inst.train_rows.max(cfg.downstream.window - 1)..t_len).collect();
            if ends.is_empty() {
                return Err(Error::Data("no held-out steps to score".into()));
            }
            let probs = predictor.predict(features, &ends)?;
            let pred: Vec<usize> = (0..ends.len()).map(|r| argmax(probs.row(r))).collect();
            let truth: Vec<usize> = ends.iter().map(|&e| labels[e]).collect();
            let (f1, accuracy) = f1_accuracy(&pred, &truth, classes)?;
            Ok(Metrics {
                rmse: None,
                mape: None,
                mape_excluded: 0,
                f1,
                accuracy,
                n_samples: ends.len(),
                seed: cfg.seed,
                config_hash: config_hash.to_string(),
            })
        }
    }
}

/// Scores of one variant on one instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentRun {
    pub method: String,
    pub instrument: usize,
    pub metrics: Metrics,
    /// Masked-entry RMSE of the completion in original units.
    pub completion_rmse: Option<f64>,
}

/// Means over instruments for one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub instruments: usize,
    pub rmse: Option<f64>,
    pub mape: Option<f64>,
    pub f1: f64,
    pub accuracy: f64,
    pub completion_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub task: TaskKind,
    pub seed: u64,
    pub config_hash: String,
    pub summary: Vec<MethodSummary>,
    pub detail: Vec<InstrumentRun>,
}

fn csv_value(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl ComparisonTable {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One line per variant: `method,instruments,rmse,mape,f1,accuracy,completion_rmse`.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "instruments",
            "rmse",
            "mape",
            "f1",
            "accuracy",
            "completion_rmse",
        ])?;
        for s in &self.summary {
            w.write_record([
                s.method.clone(),
                s.instruments.to_string(),
                csv_value(s.rmse),
                csv_value(s.mape),
                s.f1.to_string(),
                s.accuracy.to_string(),
                csv_value(s.completion_rmse),
            ])?;
        }
        finish_csv(w)
    }

    pub fn detail_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "instrument",
            "rmse",
            "mape",
            "mape_excluded",
            "f1",
            "accuracy",
            "n_samples",
            "completion_rmse",
        ])?;
        for r in &self.detail {
            let m = &r.metrics;
            w.write_record([
                r.method.clone(),
                r.instrument.to_string(),
                csv_value(m.rmse),
                csv_value(m.mape),
                m.mape_excluded.to_string(),
                m.f1.to_string(),
                m.accuracy.to_string(),
                m.n_samples.to_string(),
                csv_value(r.completion_rmse),
            ])?;
        }
        finish_csv(w)
    }

    /// Per-instrument rows of one variant, ordered by instrument.
    pub fn runs(&self, method: &str) -> Vec<&InstrumentRun> {
        self.detail.iter().filter(|r| r.method == method).collect()
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs every variant on every synthetic instrument and averages per variant.
///
/// Jobs run on a pool of `threads` workers; results are gathered in variant
/// then instrument order, so the table does not depend on the thread count.
/// Variants share instruments, missingness and seeds.
pub fn run_variants(
    variants: &[Variant],
    spec: &SyntheticSpec,
    missingness: &MissingnessSpec,
    threads: usize,
    config_hash: &str,
) -> Result<ComparisonTable> {
    let first = variants
        .first()
        .ok_or_else(|| Error::Config("at least one method is required".into()))?;
    spec.validate()?;
    missingness.validate()?;
    for v in variants {
        v.cfg.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..spec.instruments).map(move |i| (v, i)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let detail: Vec<InstrumentRun> = pool.install(|| {
        jobs.par_iter()
            .map(|&(v, i)| {
                let variant = &variants[v];
                let inst = Instrument::synthetic(spec, i, missingness, &variant.cfg)?;
                let completed = complete_with(variant.method, &inst, &variant.cfg)?;
                let metrics =
                    downstream_metrics(&inst, &completed.features(), &variant.cfg, config_hash)?;
                Ok(InstrumentRun {
                    method: variant.name.clone(),
                    instrument: i,
                    metrics,
                    completion_rmse: completion_rmse(&completed, &inst)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = variants
        .iter()
        .enumerate()
        .map(|(v, variant)| {
            let runs = &detail[v * spec.instruments..(v + 1) * spec.instruments];
            let n = runs.len() as f64;
            MethodSummary {
                method: variant.name.clone(),
                instruments: runs.len(),
                rmse: mean_of(runs.iter().map(|r| r.metrics.rmse)),
                mape: mean_of(runs.iter().map(|r| r.metrics.mape)),
                f1: runs.iter().map(|r| r.metrics.f1).sum::<f64>() / n,
                accuracy: runs.iter().map(|r| r.metrics.accuracy).sum::<f64>() / n,
                completion_rmse: mean_of(runs.iter().map(|r| r.completion_rmse)),
            }
        })
        .collect();
    Ok(ComparisonTable {
        task: first.cfg.task,
        seed: first.cfg.seed,
        config_hash: config_hash.to_string(),
        summary,
        detail,
    })
}

/// Compares completion methods under one training configuration.
pub fn benchmark_run(
    methods: &[Method],
    spec: &SyntheticSpec,
    cfg: &TrainConfig,
    missingness: &MissingnessSpec,
    threads: usize,
    config_hash: &str,
) -> Result<ComparisonTable> {
    let variants: Vec<Variant> = methods
        .iter()
        .map(|&method| Variant {
            name: method.label(),
            method,
            cfg: cfg.clone(),
        })
        .collect();
    run_variants(&variants, spec, missingness, threads, config_hash)
}

/// Loss ablation: modal y only, modal x only, and both.
pub fn loss_variants(cfg: &TrainConfig) -> Vec<Variant> {
    [
        ("L_modal_y", false, true),
        ("L_modal_x", true, false),
        ("L_modal_x + L_modal_y", true, true),
    ]
    .into_iter()
    .map(|(name, x, y)| {
        let mut cfg = cfg.clone();
        cfg.loss_switches.use_modal_x = x;
        cfg.loss_switches.use_modal_y = y;
        Variant {
            name: name.into(),
            method: Method::McDbn,
            cfg,
        }
    })
    .collect()
}

/// Decoder ablation over the x and y decoder kinds.
pub fn decoder_variants(cfg: &TrainConfig) -> Vec<Variant> {
    use crate::decoders::DecoderKind::{Linear, Lstm, Transformer};
    [
        ("Both Linear", Linear, Linear),
        ("Only Transformer", Transformer, Linear),
        ("Only LSTM", Linear, Lstm),
        ("LSTM + Transformer", Transformer, Lstm),
    ]
    .into_iter()
    .map(|(name, x, y)| {
        let mut cfg = cfg.clone();
        cfg.decoder_x = x;
        cfg.decoder_y = y;
        Variant {
            name: name.into(),
            method: Method::McDbn,
            cfg,
        }
    })
    .collect()
}
