use super::config::TrainConfig;
use super::losses::LossSwitches;
use crate::completion::{
    attended_input, completion_graph, modal_loss, run_completion, self_attention_weights,
    CompletionMode, CompletionModel, CompletionOutput, ModalityBatch,
};
use crate::data::TaskKind;
use crate::dbn::{self, LayerTrace};
use crate::decoders::{linear_graph, Decoder, LinearParams};
use crate::error::{Error, Result};
use crate::fusion::{fusion_graph, FusionParams};
use crate::graph::{Graph, Var};
use crate::numerics::{derive_seed, Mask, Matrix, Rng};
use crate::params::{all_finite, clipped_sgd_step, impl_parameters, Parameters};

/// Affine output layer over fused features; softmax for classification.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub kind: TaskKind,
    pub linear: LinearParams,
}

impl_parameters!(TaskHead => TaskHeadVars { linear: LinearParams });

impl TaskHead {
    pub fn new(kind: TaskKind, d_in: usize, classes: usize, rng: &mut Rng) -> Self {
        let d_out = match kind {
            TaskKind::Regression => 1,
            TaskKind::Classification => classes,
        };
        Self {
            kind,
            linear: LinearParams::new(d_in, d_out, rng),
        }
    }

    pub fn graph(&self, vars: &TaskHeadVars, g: &mut Graph, features: Var) -> Result<Var> {
        let out = linear_graph(&vars.linear, g, features)?;
        Ok(match self.kind {
            TaskKind::Regression => out,
            TaskKind::Classification => g.softmax_rows(out),
        })
    }
}

/// Completion, both decoders, fusion and the task head.
#[derive(Debug, Clone, PartialEq)]
pub struct McDbn {
    pub completion: CompletionModel,
    pub decoder_x: Decoder,
    pub decoder_y: Decoder,
    pub fusion: FusionParams,
    pub head: TaskHead,
}

impl_parameters!(McDbn => McDbnVars {
    completion: CompletionModel,
    decoder_x: Decoder,
    decoder_y: Decoder,
    fusion: FusionParams,
    head: TaskHead,
});

impl McDbn {
    pub fn new(
        cfg: &TrainConfig,
        d_x: usize,
        d_y: usize,
        classes: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut completion =
            CompletionModel::new(d_x, d_y, &cfg.hidden_sizes, cfg.visible_kind, rng)?;
        completion.causal = cfg.completion_causal;
        for attn in [&mut completion.attn_x, &mut completion.attn_y] {
            attn.value = attn.value.scale(cfg.attention_value_scale);
        }
        let decoder_x = Decoder::new(cfg.decoder_x, d_x, cfg.d_decoder, cfg.decoder_heads, rng)?;
        let decoder_y = Decoder::new(cfg.decoder_y, d_y, cfg.d_decoder, cfg.decoder_heads, rng)?;
        let fusion = FusionParams::new(
            cfg.d_decoder,
            cfg.heads,
            cfg.d_k,
            cfg.d_fusion,
            2 * cfg.d_decoder,
            rng,
        )?;
        let head = TaskHead::new(cfg.task, cfg.d_fusion, classes, rng);
        Ok(Self {
            completion,
            decoder_x,
            decoder_y,
            fusion,
            head,
        })
    }
}

/// Task supervision attached to a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskTargets {
    /// Next-step value of this column of x.
    Regression {
        column: usize,
    },
    Classification {
        labels: Vec<usize>,
        classes: usize,
    },
}

/// Supervision for one window.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchTargets {
    /// Row `t` holds the target for step `t`; masked rows carry no loss.
    Regression {
        target: Matrix,
        mask: Mask,
    },
    Classification {
        onehot: Matrix,
    },
}

/// Scaled modalities plus targets; rows before `train_rows` are for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub x: ModalityBatch,
    pub y: ModalityBatch,
    pub targets: TaskTargets,
    pub train_rows: usize,
}

impl PreparedData {
    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    /// Window `[start, end)` with targets restricted to rows before `limit`.
    pub fn window(
        &self,
        start: usize,
        end: usize,
        limit: usize,
    ) -> (ModalityBatch, ModalityBatch, BatchTargets) {
        let x = self.x.slice_rows(start, end);
        let y = self.y.slice_rows(start, end);
        let n = end - start;
        let targets = match &self.targets {
            TaskTargets::Regression { column } => {
                let mut target = Matrix::zeros(n, 1);
                let mut mask = Mask::all(n, 1, false);
                for r in 0..n {
                    let next = start + r + 1;
                    if next < limit && self.x.mask.get(next, *column) {
                        target[(r, 0)] = self.x.values[(next, *column)];
                        mask.set(r, 0, true);
                    }
                }
                BatchTargets::Regression { target, mask }
            }
            TaskTargets::Classification { labels, classes } => {
                let onehot =
                    Matrix::from_fn(n, *classes, |r, c| (labels[start + r] == c) as u8 as f64);
                BatchTargets::Classification { onehot }
            }
        };
        (x, y, targets)
    }
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    /// `None` when no enabled term had support in the window.
    pub total: Option<Var>,
    pub modal_x: Option<Var>,
    pub modal_y: Option<Var>,
    pub task: Option<Var>,
    pub output: Var,
}

/// Whether x is treated as the complete modality: fewer missing entries, ties
/// going to x.
pub fn x_is_complete(x: &Mask, y: &Mask) -> bool {
    x.count_missing() <= y.count_missing()
}

pub fn forward_graph(
    model: &McDbn,
    vars: &McDbnVars,
    g: &mut Graph,
    x: &ModalityBatch,
    y: &ModalityBatch,
    targets: &BatchTargets,
    switches: LossSwitches,
) -> Result<LossNodes> {
    let nodes = completion_graph(&model.completion, &vars.completion, g, x, y)?;
    let mc_x = model
        .decoder_x
        .graph(&vars.decoder_x, g, nodes.completed_x)?;
    let mc_y = model
        .decoder_y
        .graph(&vars.decoder_y, g, nodes.completed_y)?;
    let fused = fusion_graph(
        &model.fusion,
        &vars.fusion,
        g,
        mc_x,
        mc_y,
        x_is_complete(&x.mask, &y.mask),
    )?;
    let output = model.head.graph(&vars.head, g, fused)?;

    let task = match targets {
        BatchTargets::Regression { target, mask } => {
            if mask.count_observed() > 0 {
                Some(g.masked_mse(output, target, mask)?)
            } else {
                None
            }
        }
        BatchTargets::Classification { onehot } => {
            if model.head.kind != TaskKind::Classification {
                return Err(Error::Config(
                    "classification targets on a regression head".into(),
                ));
            }
            Some(g.cross_entropy(output, onehot)?)
        }
    };

    let mut parts = Vec::new();
    if switches.use_modal_x {
        parts.extend(nodes.loss_x);
    }
    if switches.use_modal_y {
        parts.extend(nodes.loss_y);
    }
    parts.extend(task);
    let total = if parts.is_empty() {
        None
    } else {
        Some(g.sum_scalars(&parts)?)
    };
    Ok(LossNodes {
        total,
        modal_x: nodes.loss_x,
        modal_y: nodes.loss_y,
        task,
        output,
    })
}

/// Per-epoch means of the loss terms over windows where each was defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub modal_x: f64,
    pub modal_y: f64,
    pub task: f64,
}

/// Writes `epoch,loss_total,loss_modal_x,loss_modal_y,loss_task` rows.
pub fn write_loss_trace(path: impl AsRef<std::path::Path>, trace: &[EpochLoss]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "loss_total",
        "loss_modal_x",
        "loss_modal_y",
        "loss_task",
    ])?;
    for e in trace {
        w.write_record([
            e.epoch.to_string(),
            e.total.to_string(),
            e.modal_x.to_string(),
            e.modal_y.to_string(),
            e.task.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reconstruction traces of every pretrained stack.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretrainReport {
    pub encoder_x: Vec<LayerTrace>,
    pub encoder_y: Vec<LayerTrace>,
    pub gen_x: Vec<LayerTrace>,
    pub gen_y: Vec<LayerTrace>,
}

/// Stream ids for seeds derived from the configured seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const PRETRAIN: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const INFERENCE: u64 = 4;
    pub const DOWNSTREAM: u64 = 5;
}

fn window_starts(rows: usize, size: usize) -> Vec<usize> {
    (0..rows).step_by(size.max(1)).collect()
}

/// Observed entries kept, unobserved entries replaced by the column mean of
/// observed entries.
fn mean_filled(batch: &ModalityBatch) -> Matrix {
    let (rows, cols) = (batch.rows(), batch.cols());
    let means: Vec<f64> = (0..cols)
        .map(|j| {
            let (s, n) = (0..rows)
                .filter(|&i| batch.mask.get(i, j))
                .fold((0.0, 0usize), |(s, n), i| (s + batch.values[(i, j)], n + 1));
            if n == 0 {
                0.5
            } else {
                s / n as f64
            }
        })
        .collect();
    Matrix::from_fn(rows, cols, |i, j| {
        if batch.mask.get(i, j) {
            batch.values[(i, j)]
        } else {
            means[j]
        }
    })
}

/// Greedy CD pretraining of every completion stack on the training rows.
///
/// Encoders see the attention-gated inputs produced by the initial
/// projections, window by window; generators see their own modality with
/// unobserved entries mean-filled.
pub fn pretrain(
    model: &McDbn,
    data: &PreparedData,
    cfg: &TrainConfig,
) -> Result<(McDbn, PretrainReport)> {
    let mut out = model.clone();
    let mut report = PretrainReport::default();
    if cfg.pretrain_epochs == 0 {
        return Ok((out, report));
    }
    let mut rng = Rng::new(derive_seed(cfg.seed, streams::PRETRAIN));
    let rows = data.train_rows;
    let c = &model.completion;

    let gated = |batch: &ModalityBatch, proj| -> Result<Matrix> {
        let mut parts = Vec::new();
        for start in window_starts(rows, cfg.batch_size) {
            let end = (start + cfg.batch_size).min(rows);
            let w = batch.slice_rows(start, end);
            let weights = self_attention_weights(&w.values, proj, c.causal)?;
            parts.push(attended_input(&w.values, &weights)?);
        }
        let refs: Vec<&Matrix> = parts.iter().collect();
        Matrix::concat_rows(&refs)
    };
    let train_x = data.x.slice_rows(0, rows);
    let train_y = data.y.slice_rows(0, rows);
    let gated_x = gated(&data.x, &c.attn_x)?;
    let gated_y = gated(&data.y, &c.attn_y)?;

    let run = |stack: &dbn::DbnStack, input: &Matrix, rng: &mut Rng| {
        dbn::pretrain_greedy_batched(
            stack,
            input,
            cfg.pretrain_epochs,
            cfg.pretrain_lr,
            cfg.cd_k,
            cfg.batch_size,
            rng,
        )
    };
    let (s, t) = run(&c.encoder_x, &gated_x, &mut rng)?;
    out.completion.encoder_x = s;
    report.encoder_x = t;
    let (s, t) = run(&c.encoder_y, &gated_y, &mut rng)?;
    out.completion.encoder_y = s;
    report.encoder_y = t;
    let (s, t) = run(&c.gen_x, &mean_filled(&train_x), &mut rng)?;
    out.completion.gen_x = s;
    report.gen_x = t;
    let (s, t) = run(&c.gen_y, &mean_filled(&train_y), &mut rng)?;
    out.completion.gen_y = s;
    report.gen_y = t;
    Ok((out, report))
}

/// Mini-batch gradient descent on the total loss over contiguous windows of
/// the training rows, visited in a seeded shuffled order each epoch.
pub fn fine_tune(
    model: &McDbn,
    data: &PreparedData,
    cfg: &TrainConfig,
) -> Result<(McDbn, Vec<EpochLoss>)> {
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) || cfg.batch_size == 0 {
        return Err(Error::Config(
            "fine-tuning needs a finite lr ≥ 0 and a positive batch size".into(),
        ));
    }
    let mut model = model.clone();
    let mut rng = Rng::new(derive_seed(cfg.seed, streams::SHUFFLE));
    let rows = data.train_rows;
    let mut starts = window_starts(rows, cfg.batch_size);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut starts);
        let mut sums = [0.0; 4];
        let mut counts = [0usize; 4];
        for (b, &start) in starts.iter().enumerate() {
            let end = (start + cfg.batch_size).min(rows);
            let (x, y, targets) = data.window(start, end, rows);
            let mut g = Graph::new();
            let vars = model.bind(&mut g);
            let nodes = forward_graph(&model, &vars, &mut g, &x, &y, &targets, cfg.loss_switches)?;
            let Some(total) = nodes.total else { continue };
            let value = g.scalar(total);
            if !value.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss became {value} at epoch {epoch}, window {b} (rows {start}..{end})"
                )));
            }
            for (k, node) in [Some(total), nodes.modal_x, nodes.modal_y, nodes.task]
                .into_iter()
                .enumerate()
            {
                if let Some(v) = node {
                    sums[k] += g.scalar(v);
                    counts[k] += 1;
                }
            }
            let grads = g.backward(total)?;
            clipped_sgd_step(&mut model, &vars, &grads, cfg.lr, cfg.grad_clip);
            if !all_finite(&model) {
                return Err(Error::Divergence(format!(
                    "parameters became non-finite at epoch {epoch}, window {b}"
                )));
            }
        }
        let mean = |k: usize| {
            if counts[k] == 0 {
                0.0
            } else {
                sums[k] / counts[k] as f64
            }
        };
        let entry = EpochLoss {
            epoch,
            total: mean(0),
            modal_x: mean(1),
            modal_y: mean(2),
            task: mean(3),
        };
        log::debug!("epoch {epoch}: total {:.6}", entry.total);
        trace.push(entry);
    }
    Ok((model, trace))
}

/// Completes whole series window by window (consecutive windows of
/// `batch_size` rows starting at row 0).
pub fn complete_series(
    model: &CompletionModel,
    x: &ModalityBatch,
    y: &ModalityBatch,
    batch_size: usize,
    mode: CompletionMode,
    rng: &mut Rng,
) -> Result<CompletionOutput> {
    let rows = x.rows();
    let mut pieces = Vec::new();
    for start in window_starts(rows, batch_size) {
        let end = (start + batch_size).min(rows);
        pieces.push(run_completion(
            &x.slice_rows(start, end),
            &y.slice_rows(start, end),
            model,
            rng,
            mode,
        )?);
    }
    let cat = |f: fn(&CompletionOutput) -> &Matrix| -> Result<Matrix> {
        let refs: Vec<&Matrix> = pieces.iter().map(f).collect();
        if refs.is_empty() {
            return Ok(Matrix::zeros(0, 0));
        }
        Matrix::concat_rows(&refs)
    };
    let generated_x = cat(|o| &o.generated_x)?;
    let generated_y = cat(|o| &o.generated_y)?;
    let loss = |generated: &Matrix, batch: &ModalityBatch| {
        (batch.mask.count_observed() > 0)
            .then(|| modal_loss(generated, batch))
            .transpose()
    };
    Ok(CompletionOutput {
        completed_x: cat(|o| &o.completed_x)?,
        completed_y: cat(|o| &o.completed_y)?,
        loss_x: loss(&generated_x, x)?,
        loss_y: loss(&generated_y, y)?,
        generated_x,
        generated_y,
    })
}

/// Task-head outputs for every row, computed window by window.
pub fn predict(model: &McDbn, data: &PreparedData, batch_size: usize) -> Result<Matrix> {
    let rows = data.rows();
    let mut parts = Vec::new();
    for start in window_starts(rows, batch_size) {
        let end = (start + batch_size).min(rows);
        let (x, y, targets) = data.window(start, end, 0);
        let mut g = Graph::new();
        let vars = model.bind(&mut g);
        let nodes = forward_graph(
            model,
            &vars,
            &mut g,
            &x,
            &y,
            &targets,
            LossSwitches::default(),
        )?;
        parts.push(g.value(nodes.output).clone());
    }
    let refs: Vec<&Matrix> = parts.iter().collect();
    Matrix::concat_rows(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::completion::Modality;
    use crate::params::named_tensors;

    pub(crate) fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 6,
            pretrain_epochs: 2,
            hidden_sizes: vec![5, 3],
            d_decoder: 4,
            decoder_heads: 2,
            heads: 2,
            d_k: 2,
            d_fusion: 3,
            ..TrainConfig::default()
        }
    }

    pub(crate) fn tiny_data(task: TaskKind, seed: u64) -> PreparedData {
        let mut rng = Rng::new(seed);
        let rows = 20;
        let x = Matrix::from_fn(rows, 3, |_, _| rng.uniform());
        let y = Matrix::from_fn(rows, 2, |_, _| rng.uniform());
        let mut mask = Mask::all(rows, 2, true);
        for i in (0..rows).step_by(3) {
            mask.set(i, i % 2, false);
        }
        let targets = match task {
            TaskKind::Regression => TaskTargets::Regression { column: 0 },
            TaskKind::Classification => TaskTargets::Classification {
                labels: (0..rows).map(|i| i % 3).collect(),
                classes: 3,
            },
        };
        PreparedData {
            x: ModalityBatch::fully_observed(x, Modality::X),
            y: ModalityBatch::new(y, mask, Modality::Y).unwrap(),
            targets,
            train_rows: 14,
        }
    }

    #[test]
    fn zero_lr_leaves_model_unchanged() {
        let data = tiny_data(TaskKind::Regression, 1);
        let model = McDbn::new(&tiny_config(), 3, 2, 1, &mut Rng::new(2)).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            ..tiny_config()
        };
        let (trained, trace) = fine_tune(&model, &data, &cfg).unwrap();
        assert_eq!(trained, model);
        assert_eq!(trace.len(), 2);
        assert!((trace[0].total - trace[1].total).abs() < 1e-12);
    }

    #[test]
    fn fine_tune_is_deterministic_and_leaves_data_alone() {
        let cfg = tiny_config();
        let data = tiny_data(TaskKind::Classification, 3);
        let before = data.clone();
        let model = McDbn::new(
            &TrainConfig {
                task: TaskKind::Classification,
                ..cfg.clone()
            },
            3,
            2,
            3,
            &mut Rng::new(4),
        )
        .unwrap();
        let cfg = TrainConfig {
            task: TaskKind::Classification,
            ..cfg
        };
        let a = fine_tune(&model, &data, &cfg).unwrap();
        let b = fine_tune(&model, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(data, before);
    }

    #[test]
    fn pretraining_touches_only_completion_stacks() {
        let cfg = tiny_config();
        let data = tiny_data(TaskKind::Regression, 5);
        let model = McDbn::new(&cfg, 3, 2, 1, &mut Rng::new(6)).unwrap();
        let (pre, report) = pretrain(&model, &data, &cfg).unwrap();
        assert_eq!(pre.decoder_x, model.decoder_x);
        assert_eq!(pre.fusion, model.fusion);
        assert_ne!(pre.completion.gen_y, model.completion.gen_y);
        assert_eq!(report.encoder_x.len(), 2);
        assert_eq!(
            named_tensors(&pre, "").len(),
            named_tensors(&model, "").len()
        );
    }

    #[test]
    fn regression_targets_stop_at_limit() {
        let data = tiny_data(TaskKind::Regression, 7);
        let (_, _, t) = data.window(10, 16, 14);
        let BatchTargets::Regression { target, mask } = t else {
            panic!()
        };
        assert_eq!(mask.count_observed(), 3);
        assert_eq!(target[(0, 0)], data.x.values[(11, 0)]);
    }

    #[test]
    fn predict_covers_every_row() {
        let cfg = tiny_config();
        let data = tiny_data(TaskKind::Regression, 8);
        let model = McDbn::new(&cfg, 3, 2, 1, &mut Rng::new(9)).unwrap();
        let out = predict(&model, &data, cfg.batch_size).unwrap();
        assert_eq!((out.rows(), out.cols()), (20, 1));
    }
}
