use super::config::TrainConfig;
use super::model::streams;
use crate::data::TaskKind;
use crate::decoders::{lstm_steps_graph, LinearParams, LstmParams};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::numerics::{derive_seed, Matrix, Rng};
use crate::params::{all_finite, impl_parameters, sgd_step, Parameters};

/// Completed features with the downstream supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamData {
    /// `T × d`, scaled.
    pub features: Matrix,
    pub task: DownstreamTask,
    /// Rows before this index are used for fitting.
    pub train_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DownstreamTask {
    /// Predict `series[t + 1]` from the window ending at `t`.
    NextStep { series: Vec<f64> },
    /// Predict `labels[t]` from the window ending at `t`.
    Label { labels: Vec<usize>, classes: usize },
}

impl DownstreamTask {
    fn kind(&self) -> TaskKind {
        match self {
            DownstreamTask::NextStep { .. } => TaskKind::Regression,
            DownstreamTask::Label { .. } => TaskKind::Classification,
        }
    }

    fn out_dim(&self) -> usize {
        match self {
            DownstreamTask::NextStep { .. } => 1,
            DownstreamTask::Label { classes, .. } => *classes,
        }
    }
}

/// Single-layer LSTM over a fixed history window, read out at its last step.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub kind: TaskKind,
    pub window: usize,
    pub lstm: LstmParams,
    pub head: LinearParams,
}

impl_parameters!(Predictor => PredictorVars { lstm: LstmParams, head: LinearParams });

impl Predictor {
    fn graph(
        &self,
        vars: &PredictorVars,
        g: &mut Graph,
        features: &Matrix,
        ends: &[usize],
    ) -> Result<Var> {
        let w = self.window;
        let steps: Vec<Var> = (0..w)
            .map(|k| {
                let rows: Vec<usize> = ends.iter().map(|&e| e + 1 + k - w).collect();
                g.constant(features.select_rows(&rows))
            })
            .collect();
        let hidden = lstm_steps_graph(&self.lstm, &vars.lstm, g, &steps)?;
        let last = *hidden
            .last()
            .ok_or_else(|| Error::Config("empty window".into()))?;
        let out = g.affine(last, vars.head.weight, vars.head.bias)?;
        Ok(match self.kind {
            TaskKind::Regression => out,
            TaskKind::Classification => g.softmax_rows(out),
        })
    }

    /// Outputs for windows ending at each of `ends` (each ≥ `window − 1`):
    /// a next-step value, or class probabilities.
    pub fn predict(&self, features: &Matrix, ends: &[usize]) -> Result<Matrix> {
        if let Some(&bad) = ends
            .iter()
            .find(|&&e| e + 1 < self.window || e >= features.rows())
        {
            return Err(Error::Data(format!("no full window ends at row {bad}")));
        }
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let out = self.graph(&vars, &mut g, features, ends)?;
        Ok(g.value(out).clone())
    }
}

/// Trains the predictor with plain SGD on minibatches of windows ending in
/// the training rows. Initialisation and visiting order depend only on the
/// configured seed, so methods that differ only in their completed features
/// share everything else.
pub fn train_downstream(data: &DownstreamData, cfg: &TrainConfig) -> Result<Predictor> {
    let d = &cfg.downstream;
    let w = d.window;
    let mut rng = Rng::new(derive_seed(cfg.seed, streams::DOWNSTREAM));
    let mut predictor = Predictor {
        kind: data.task.kind(),
        window: w,
        lstm: LstmParams::new(data.features.cols(), d.hidden, &mut rng),
        head: LinearParams::new(d.hidden, data.task.out_dim(), &mut rng),
    };
    let last_end = match data.task {
        DownstreamTask::NextStep { .. } => data.train_rows.saturating_sub(2),
        DownstreamTask::Label { .. } => data.train_rows.saturating_sub(1),
    };
    if last_end + 1 < w {
        return Err(Error::Data(format!(
            "{} training rows are too few for windows of {w}",
            data.train_rows
        )));
    }
    let mut ends: Vec<usize> = (w - 1..=last_end).collect();

    for epoch in 0..d.epochs {
        rng.shuffle(&mut ends);
        for chunk in ends.chunks(d.batch_windows) {
            let mut g = Graph::new();
            let vars = predictor.bind(&mut g);
            let out = predictor.graph(&vars, &mut g, &data.features, chunk)?;
            let loss = match &data.task {
                DownstreamTask::NextStep { series } => {
                    let target = Matrix::from_fn(chunk.len(), 1, |r, _| series[chunk[r] + 1]);
                    g.mse(out, &target)?
                }
                DownstreamTask::Label { labels, classes } => {
                    let onehot = Matrix::from_fn(chunk.len(), *classes, |r, c| {
                        (labels[chunk[r]] == c) as u8 as f64
                    });
                    g.cross_entropy(out, &onehot)?
                }
            };
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Divergence(format!(
                    "downstream loss became {value} in epoch {}",
                    epoch + 1
                )));
            }
            let grads = g.backward(loss)?;
            sgd_step(&mut predictor, &vars, &grads, d.lr);
        }
        if !all_finite(&predictor) {
            return Err(Error::Divergence(format!(
                "downstream parameters became non-finite in epoch {}",
                epoch + 1
            )));
        }
    }
    Ok(predictor)
}
