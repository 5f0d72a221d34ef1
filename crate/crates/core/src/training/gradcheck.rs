use super::config::TrainConfig;
use super::losses::LossSwitches;
use super::model::{forward_graph, McDbn, TaskHead};
use crate::completion::{completion_graph, CompletionModel, Modality, ModalityBatch};
use crate::data::TaskKind;
use crate::decoders::{
    linear_graph, lstm_graph, transformer_graph, LinearParams, LstmParams, TransformerBlockParams,
};
use crate::error::{Error, Result};
use crate::fusion::{fusion_graph, FusionParams};
use crate::graph::{Graph, Var};
use crate::numerics::{Mask, Matrix, Rng};
use crate::params::{flat_gradients, Parameters};
use crate::rbm::VisibleKind;

/// Relative error `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn set_entry<P: Parameters>(params: &mut P, tensor: usize, index: usize, value: f64) -> f64 {
    let mut seen = 0;
    let mut old = 0.0;
    params.visit_mut("", &mut |_, m| {
        if seen == tensor {
            old = m.as_slice()[index];
            m.as_mut_slice()[index] = value;
        }
        seen += 1;
    });
    old
}

/// Largest relative error between the analytic gradient of `loss` and central
/// differences `(f(θ+h) − f(θ−h)) / 2h` over every parameter entry.
pub fn gradient_check<P, F>(params: &P, h: f64, loss: F) -> Result<f64>
where
    P: Parameters + Clone,
    F: Fn(&P, &P::Vars, &mut Graph) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("step {h} must be positive")));
    }
    let evaluate = |p: &P| -> Result<f64> {
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let l = loss(p, &vars, &mut g)?;
        Ok(g.scalar(l))
    };
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let l = loss(params, &vars, &mut g)?;
    let analytic = flat_gradients::<P>(&vars, &g.backward(l)?);

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.iter().enumerate() {
        for (k, &a) in grad.as_slice().iter().enumerate() {
            let original = set_entry(&mut probe, t, k, 0.0);
            set_entry(&mut probe, t, k, original + h);
            let up = evaluate(&probe)?;
            set_entry(&mut probe, t, k, original - h);
            let down = evaluate(&probe)?;
            set_entry(&mut probe, t, k, original);
            worst = worst.max(relative_error(a, (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}

/// Relative error between `⟨∇f, v⟩` and `(f(θ+hv) − f(θ−hv)) / 2h` along a
/// random unit direction `v`.
pub fn directional_check<P, F>(params: &P, h: f64, rng: &mut Rng, loss: F) -> Result<f64>
where
    P: Parameters + Clone,
    F: Fn(&P, &P::Vars, &mut Graph) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("step {h} must be positive")));
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let l = loss(params, &vars, &mut g)?;
    let analytic = flat_gradients::<P>(&vars, &g.backward(l)?);
    let mut direction: Vec<Matrix> = analytic
        .iter()
        .map(|m| Matrix::randn(m.rows(), m.cols(), 1.0, rng))
        .collect();
    let norm = direction
        .iter()
        .flat_map(|m| m.as_slice())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    for m in &mut direction {
        *m = m.scale(1.0 / norm);
    }
    let slope: f64 = analytic
        .iter()
        .zip(&direction)
        .map(|(a, v)| {
            a.as_slice()
                .iter()
                .zip(v.as_slice())
                .map(|(x, y)| x * y)
                .sum::<f64>()
        })
        .sum();
    let shifted = |sign: f64| -> Result<f64> {
        let mut p = params.clone();
        let mut t = 0;
        p.visit_mut("", &mut |_, m| {
            for (x, v) in m.as_mut_slice().iter_mut().zip(direction[t].as_slice()) {
                *x += sign * h * v;
            }
            t += 1;
        });
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let l = loss(&p, &vars, &mut g)?;
        Ok(g.scalar(l))
    };
    Ok(relative_error(
        slope,
        (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `(path, max relative error)` per checked path.
    pub entries: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

pub const GRADCHECK_STEP: f64 = 1e-5;

/// Spread of the parameters of the random check instances. Production
/// initialisations are far smaller for some tensors, which pushes gradients
/// below the resolution of central differences.
const INSTANCE_STD: f64 = 0.7;
const ATTENTION_STD: f64 = 1.5;

/// Resamples every parameter entry from `N(0, std²)`.
pub fn randomize<P: Parameters>(params: &mut P, std: f64, rng: &mut Rng) {
    params.visit_mut("", &mut |_, m| {
        for v in m.as_mut_slice() {
            *v = std * rng.gaussian();
        }
    });
}

fn instance<P: Parameters>(mut params: P, rng: &mut Rng) -> P {
    randomize(&mut params, INSTANCE_STD, rng);
    params
}

fn uniform(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform())
}

fn decoder_checks(rng: &mut Rng, t: usize, out: &mut Vec<(String, f64)>) -> Result<()> {
    let seq = Matrix::randn(t, 3, 1.0, rng);

    let linear = instance(LinearParams::new(3, 4, rng), rng);
    let target = Matrix::randn(t, 4, 1.0, rng);
    let e = gradient_check(&linear, GRADCHECK_STEP, |_, v, g| {
        let x = g.constant(seq.clone());
        let y = linear_graph(v, g, x)?;
        g.mse(y, &target)
    })?;
    out.push(("decoder.linear".into(), e));

    let lstm = instance(LstmParams::new(3, 4, rng), rng);
    let e = gradient_check(&lstm, GRADCHECK_STEP, |p, v, g| {
        let x = g.constant(seq.clone());
        let y = lstm_graph(p, v, g, x)?;
        g.mse(y, &target)
    })?;
    out.push(("decoder.lstm".into(), e));

    let block = instance(TransformerBlockParams::new(3, 4, 2, rng)?, rng);
    let e = gradient_check(&block, GRADCHECK_STEP, |p, v, g| {
        let x = g.constant(seq.clone());
        let y = transformer_graph(p, v, g, x)?;
        g.mse(y, &target)
    })?;
    out.push(("decoder.transformer".into(), e));
    Ok(())
}

fn fusion_check(rng: &mut Rng, t: usize) -> Result<f64> {
    let fusion = instance(FusionParams::new(8, 2, 4, 3, 16, rng)?, rng);
    let mc_x = Matrix::randn(t, 8, 1.0, rng);
    let mc_y = Matrix::randn(t, 8, 1.0, rng);
    let target = Matrix::randn(t, 3, 1.0, rng);
    gradient_check(&fusion, GRADCHECK_STEP, |p, v, g| {
        let x = g.constant(mc_x.clone());
        let y = g.constant(mc_y.clone());
        let out = fusion_graph(p, v, g, x, y, true)?;
        g.mse(out, &target)
    })
}

fn masked_batches(
    rng: &mut Rng,
    t: usize,
    d_x: usize,
    d_y: usize,
) -> Result<(ModalityBatch, ModalityBatch)> {
    let x = ModalityBatch::fully_observed(uniform(t, d_x, rng), Modality::X);
    let mut mask = Mask::all(t, d_y, true);
    for i in 0..t {
        mask.set(i, rng.below(d_y as u64) as usize, false);
    }
    let y = ModalityBatch::new(uniform(t, d_y, rng), mask, Modality::Y)?;
    Ok((x, y))
}

fn completion_check(rng: &mut Rng, t: usize) -> Result<f64> {
    let mut model = instance(
        CompletionModel::new(3, 4, &[6], VisibleKind::BernoulliProb, rng)?,
        rng,
    );
    randomize(&mut model.attn_x, ATTENTION_STD, rng);
    randomize(&mut model.attn_y, ATTENTION_STD, rng);
    let (x, y) = masked_batches(rng, t, 3, 4)?;
    let target = uniform(t, 4, rng);
    gradient_check(&model, GRADCHECK_STEP, |p, v, g| {
        let nodes = completion_graph(p, v, g, &x, &y)?;
        let fill = g.mse(nodes.completed_y, &target)?;
        let mut parts = vec![fill];
        parts.extend(nodes.loss_x);
        parts.extend(nodes.loss_y);
        g.sum_scalars(&parts)
    })
}

fn task_checks(rng: &mut Rng, t: usize, out: &mut Vec<(String, f64)>) -> Result<()> {
    let features = Matrix::randn(t, 5, 1.0, rng);
    let head = instance(TaskHead::new(TaskKind::Classification, 5, 3, rng), rng);
    let onehot = Matrix::from_fn(t, 3, |i, c| (i % 3 == c) as u8 as f64);
    let e = gradient_check(&head, GRADCHECK_STEP, |p, v, g| {
        let f = g.constant(features.clone());
        let probs = p.graph(v, g, f)?;
        g.cross_entropy(probs, &onehot)
    })?;
    out.push(("task.classification".into(), e));

    let head = instance(TaskHead::new(TaskKind::Regression, 5, 1, rng), rng);
    let target = Matrix::randn(t, 1, 1.0, rng);
    let e = gradient_check(&head, GRADCHECK_STEP, |p, v, g| {
        let f = g.constant(features.clone());
        let pred = p.graph(v, g, f)?;
        g.mse(pred, &target)
    })?;
    out.push(("task.regression".into(), e));
    Ok(())
}

/// Directional check of the summed training loss through every component,
/// with two-layer stacks.
pub fn full_model_check(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let rng = &mut rng;
    let t = 6;
    let cfg = TrainConfig {
        task: TaskKind::Classification,
        hidden_sizes: vec![5, 3],
        d_decoder: 4,
        decoder_heads: 2,
        heads: 2,
        d_k: 2,
        d_fusion: 3,
        ..TrainConfig::default()
    };
    let model = instance(McDbn::new(&cfg, 3, 4, 3, rng)?, rng);
    let (x, y) = masked_batches(rng, t, 3, 4)?;
    let targets = super::model::BatchTargets::Classification {
        onehot: Matrix::from_fn(t, 3, |i, c| ((i + 1) % 3 == c) as u8 as f64),
    };
    directional_check(&model, GRADCHECK_STEP, rng, |p, v, g| {
        let nodes = forward_graph(p, v, g, &x, &y, &targets, LossSwitches::default())?;
        nodes
            .total
            .ok_or_else(|| Error::Degenerate("no loss terms".into()))
    })
}

/// Checks every differentiable path on random small instances (T = 5,
/// widths ≤ 8).
pub fn gradient_suite(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let t = 6;
    let mut entries = Vec::new();
    decoder_checks(&mut rng, t, &mut entries)?;
    entries.push(("fusion".into(), fusion_check(&mut rng, t)?));
    entries.push((
        "completion.expectation".into(),
        completion_check(&mut rng, t)?,
    ));
    task_checks(&mut rng, t, &mut entries)?;
    Ok(GradCheckReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_path_is_nearly_exact() {
        let mut rng = Rng::new(3);
        let linear = LinearParams::new(3, 2, &mut rng);
        let seq = Matrix::randn(4, 3, 1.0, &mut rng);
        let e = gradient_check(&linear, GRADCHECK_STEP, |_, v, g| {
            let x = g.constant(seq.clone());
            let y = linear_graph(v, g, x)?;
            let weights = g.constant(Matrix::randn(4, 2, 1.0, &mut Rng::new(4)));
            let prod = g.mul(y, weights)?;
            let ones = g.constant(Matrix::filled(2, 1, 1.0));
            let s = g.matmul(prod, ones)?;
            let ones = g.constant(Matrix::filled(1, 4, 1.0));
            g.matmul(ones, s)
        })
        .unwrap();
        assert!(e <= 1e-7, "{e}");
    }

    #[test]
    fn suite_passes() {
        let report = gradient_suite(11).unwrap();
        for (name, e) in &report.entries {
            assert!(*e <= 1e-4, "{name}: {e}");
        }
        assert_eq!(report.entries.len(), 7);
    }

    #[test]
    fn full_model_directional_derivatives_agree() {
        for seed in 0..5 {
            let e = full_model_check(seed).unwrap();
            assert!(e <= 1e-6, "seed {seed}: {e}");
        }
    }

    #[test]
    fn stacked_completion_directional_derivative_agrees() {
        let mut rng = Rng::new(8);
        let model = instance(
            CompletionModel::new(3, 4, &[5, 3], VisibleKind::BernoulliProb, &mut rng).unwrap(),
            &mut rng,
        );
        let (x, y) = masked_batches(&mut rng, 6, 3, 4).unwrap();
        let e = directional_check(&model, GRADCHECK_STEP, &mut rng, |p, v, g| {
            let nodes = completion_graph(p, v, g, &x, &y)?;
            let parts: Vec<Var> = nodes.loss_x.into_iter().chain(nodes.loss_y).collect();
            g.sum_scalars(&parts)
        })
        .unwrap();
        assert!(e <= 1e-6, "{e}");
    }

    #[test]
    fn nonpositive_step_rejected() {
        let p = LinearParams::zeros(1, 1);
        assert!(gradient_check(&p, 0.0, |_, v, g| {
            let x = g.constant(Matrix::zeros(1, 1));
            linear_graph(v, g, x)
        })
        .is_err());
    }
}
