//! Modality completion: attention-gated encoding of each modality, generation
//! of each modality from the other's hidden code, and substitution at masked
//! entries.

use serde::{Deserialize, Serialize};

use crate::dbn::{self, DbnStack, DbnVars};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::numerics::{bernoulli_sample, matmul, matmul_bt, softmax_rows, Mask, Matrix, Rng};
use crate::params::impl_parameters;
use crate::rbm::VisibleKind;

/// Additive score for attention entries hidden by the causal mask.
const MASKED_SCORE: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    X,
    Y,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::X => "x",
            Modality::Y => "y",
        }
    }
}

/// One modality on the shared time grid. Unobserved entries hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityBatch {
    pub values: Matrix,
    pub mask: Mask,
    pub modality: Modality,
}

impl ModalityBatch {
    pub fn new(values: Matrix, mask: Mask, modality: Modality) -> Result<Self> {
        if values.rows() != mask.rows() || values.cols() != mask.cols() {
            return Err(Error::Data(format!(
                "modality {} has values {} but mask {}×{}",
                modality.name(),
                values.shape(),
                mask.rows(),
                mask.cols()
            )));
        }
        let values = Matrix::from_fn(values.rows(), values.cols(), |i, j| {
            if mask.get(i, j) {
                values[(i, j)]
            } else {
                0.0
            }
        });
        Ok(Self {
            values,
            mask,
            modality,
        })
    }

    pub fn fully_observed(values: Matrix, modality: Modality) -> Self {
        let mask = Mask::all(values.rows(), values.cols(), true);
        Self {
            values,
            mask,
            modality,
        }
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            values: self.values.slice_rows(start, end),
            mask: self.mask.slice_rows(start, end),
            modality: self.modality,
        }
    }
}

/// Query/key/value projections (each `d × d`) of the per-modality
/// self-attention that produces the gating weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProjection {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
}

impl_parameters!(AttentionProjection => AttentionVars { query: Matrix, key: Matrix, value: Matrix });

impl AttentionProjection {
    pub fn new(d: usize, rng: &mut Rng) -> Self {
        let std = 1.0 / (d as f64).sqrt();
        Self {
            query: Matrix::randn(d, d, std, rng),
            key: Matrix::randn(d, d, std, rng),
            value: Matrix::identity(d)
                .add(&Matrix::randn(d, d, 0.1 * std, rng))
                .expect("square"),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            query: Matrix::zeros(d, d),
            key: Matrix::zeros(d, d),
            value: Matrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionModel {
    pub attn_x: AttentionProjection,
    pub attn_y: AttentionProjection,
    pub encoder_x: DbnStack,
    pub encoder_y: DbnStack,
    /// Maps the y hidden code to x's visible space.
    pub gen_x: DbnStack,
    /// Maps the x hidden code to y's visible space.
    pub gen_y: DbnStack,
    /// Restricts each step's attention to itself and earlier steps.
    pub causal: bool,
}

impl_parameters!(CompletionModel => CompletionVars {
    attn_x: AttentionProjection,
    attn_y: AttentionProjection,
    encoder_x: DbnStack,
    encoder_y: DbnStack,
    gen_x: DbnStack,
    gen_y: DbnStack,
});

impl CompletionModel {
    /// `hidden` lists the stack widths above the visible layer; the last
    /// entry is the shared latent width.
    pub fn new(
        d_x: usize,
        d_y: usize,
        hidden: &[usize],
        kind: VisibleKind,
        rng: &mut Rng,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Config(
                "completion stacks need at least one hidden layer".into(),
            ));
        }
        let sizes = |d: usize| {
            let mut s = vec![d];
            s.extend_from_slice(hidden);
            s
        };
        let attn_x = AttentionProjection::new(d_x, rng);
        let attn_y = AttentionProjection::new(d_y, rng);
        // The encoders see attention-weighted rows, which are probabilities.
        let encoder_x = DbnStack::new(&sizes(d_x), VisibleKind::BernoulliProb, rng)?;
        let encoder_y = DbnStack::new(&sizes(d_y), VisibleKind::BernoulliProb, rng)?;
        let gen_x = DbnStack::new(&sizes(d_x), kind, rng)?;
        let gen_y = DbnStack::new(&sizes(d_y), kind, rng)?;
        Self::from_parts(attn_x, attn_y, encoder_x, encoder_y, gen_x, gen_y, true)
    }

    pub fn from_parts(
        attn_x: AttentionProjection,
        attn_y: AttentionProjection,
        encoder_x: DbnStack,
        encoder_y: DbnStack,
        gen_x: DbnStack,
        gen_y: DbnStack,
        causal: bool,
    ) -> Result<Self> {
        let model = Self {
            attn_x,
            attn_y,
            encoder_x,
            encoder_y,
            gen_x,
            gen_y,
            causal,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("completion model: {what}")))
            }
        };
        check(
            self.encoder_x.top_dim() == self.encoder_y.top_dim(),
            "encoder latent widths differ",
        )?;
        check(
            self.gen_x.top_dim() == self.encoder_y.top_dim(),
            "gen_x input width differs from y code",
        )?;
        check(
            self.gen_y.top_dim() == self.encoder_x.top_dim(),
            "gen_y input width differs from x code",
        )?;
        check(
            self.gen_x.input_dim() == self.d_x(),
            "gen_x output width differs from d_x",
        )?;
        check(
            self.gen_y.input_dim() == self.d_y(),
            "gen_y output width differs from d_y",
        )?;
        check(
            self.encoder_x.input_dim() == self.d_x(),
            "encoder_x input differs from d_x",
        )?;
        check(
            self.encoder_y.input_dim() == self.d_y(),
            "encoder_y input differs from d_y",
        )
    }

    pub fn d_x(&self) -> usize {
        self.attn_x.dim()
    }

    pub fn d_y(&self) -> usize {
        self.attn_y.dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder_x.top_dim()
    }

    fn parts(&self, modality: Modality) -> (&AttentionProjection, &DbnStack, &DbnStack) {
        match modality {
            Modality::X => (&self.attn_x, &self.encoder_x, &self.gen_x),
            Modality::Y => (&self.attn_y, &self.encoder_y, &self.gen_y),
        }
    }
}

fn causal_scores(t_len: usize) -> Matrix {
    Matrix::from_fn(t_len, t_len, |i, j| if j > i { MASKED_SCORE } else { 0.0 })
}

/// Single-head scaled dot-product self-attention over time steps,
/// `softmax((I·P_q)(I·P_k)ᵀ/√d)·(I·P_v)`, shape `T × d`.
pub fn self_attention_weights(
    input: &Matrix,
    proj: &AttentionProjection,
    causal: bool,
) -> Result<Matrix> {
    if input.cols() != proj.dim() {
        return Err(Error::shape(
            "self_attention_weights",
            input.shape(),
            proj.query.shape(),
        ));
    }
    let q = matmul(input, &proj.query)?;
    let k = matmul(input, &proj.key)?;
    let v = matmul(input, &proj.value)?;
    let mut scores = matmul_bt(&q, &k)?.scale(1.0 / (proj.dim() as f64).sqrt());
    if causal {
        scores = scores.add(&causal_scores(input.rows()))?;
    }
    matmul(&softmax_rows(&scores), &v)
}

/// Row-wise softmax over features of `I ⊙ W_attn`.
pub fn attended_input(input: &Matrix, weights: &Matrix) -> Result<Matrix> {
    Ok(softmax_rows(&input.hadamard(weights)?))
}

/// Binary hidden code sampled from the encoder's top-layer probabilities.
pub fn encode_hidden(attn: &Matrix, encoder: &DbnStack, rng: &mut Rng) -> Result<Matrix> {
    bernoulli_sample(&dbn::transform_up(encoder, attn)?, rng)
}

pub fn complete_modality(
    h_other: &Matrix,
    generator: &DbnStack,
    rng: &mut Rng,
    stochastic: bool,
) -> Result<Matrix> {
    dbn::generate_down(generator, h_other, rng, stochastic)
}

/// Mean squared error over observed entries.
pub fn modal_loss(generated: &Matrix, batch: &ModalityBatch) -> Result<f64> {
    if generated.rows() != batch.rows() || generated.cols() != batch.cols() {
        return Err(Error::shape(
            "modal_loss",
            generated.shape(),
            batch.values.shape(),
        ));
    }
    let observed = batch.mask.count_observed();
    if observed == 0 {
        return Err(Error::Degenerate(format!(
            "modality {} has no observed entries",
            batch.modality.name()
        )));
    }
    let total: f64 = generated
        .as_slice()
        .iter()
        .zip(batch.values.as_slice())
        .zip(batch.mask.as_slice())
        .filter(|(_, &m)| m)
        .map(|((g, v), _)| (g - v) * (g - v))
        .sum();
    Ok(total / observed as f64)
}

/// Observed entries from `batch`, generated entries elsewhere.
pub fn substitute(batch: &ModalityBatch, generated: &Matrix) -> Result<Matrix> {
    if generated.shape() != batch.values.shape() {
        return Err(Error::shape(
            "substitute",
            batch.values.shape(),
            generated.shape(),
        ));
    }
    Ok(Matrix::from_fn(batch.rows(), batch.cols(), |i, j| {
        if batch.mask.get(i, j) {
            batch.values[(i, j)]
        } else {
            generated[(i, j)]
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompletionMode {
    /// Sampled binary hidden codes and stochastic generation.
    Sampled,
    /// Probabilities throughout; no randomness consumed.
    #[default]
    Expectation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionOutput {
    pub generated_x: Matrix,
    pub generated_y: Matrix,
    pub completed_x: Matrix,
    pub completed_y: Matrix,
    /// `None` when the modality has no observed entries.
    pub loss_x: Option<f64>,
    pub loss_y: Option<f64>,
}

fn check_batches(x: &ModalityBatch, y: &ModalityBatch, model: &CompletionModel) -> Result<()> {
    if x.cols() != model.d_x() {
        return Err(Error::shape(
            "run_completion",
            x.values.shape(),
            model.attn_x.query.shape(),
        ));
    }
    if y.cols() != model.d_y() {
        return Err(Error::shape(
            "run_completion",
            y.values.shape(),
            model.attn_y.query.shape(),
        ));
    }
    if x.rows() != y.rows() {
        return Err(Error::shape(
            "run_completion",
            x.values.shape(),
            y.values.shape(),
        ));
    }
    Ok(())
}

fn optional_loss(generated: &Matrix, batch: &ModalityBatch) -> Result<Option<f64>> {
    if batch.mask.count_observed() == 0 {
        Ok(None)
    } else {
        modal_loss(generated, batch).map(Some)
    }
}

/// Full completion pass. Random draws, in sampled mode: x code, y code,
/// generation of x, generation of y.
pub fn run_completion(
    x: &ModalityBatch,
    y: &ModalityBatch,
    model: &CompletionModel,
    rng: &mut Rng,
    mode: CompletionMode,
) -> Result<CompletionOutput> {
    check_batches(x, y, model)?;
    let mut codes = Vec::with_capacity(2);
    for batch in [x, y] {
        let (proj, encoder, _) = model.parts(batch.modality);
        let weights = self_attention_weights(&batch.values, proj, model.causal)?;
        let attn = attended_input(&batch.values, &weights)?;
        codes.push(match mode {
            CompletionMode::Sampled => encode_hidden(&attn, encoder, rng)?,
            CompletionMode::Expectation => dbn::transform_up(encoder, &attn)?,
        });
    }
    let stochastic = mode == CompletionMode::Sampled;
    let generated_x = complete_modality(&codes[1], &model.gen_x, rng, stochastic)?;
    let generated_y = complete_modality(&codes[0], &model.gen_y, rng, stochastic)?;
    Ok(CompletionOutput {
        completed_x: substitute(x, &generated_x)?,
        completed_y: substitute(y, &generated_y)?,
        loss_x: optional_loss(&generated_x, x)?,
        loss_y: optional_loss(&generated_y, y)?,
        generated_x,
        generated_y,
    })
}

/// Graph handles of an expectation-mode completion pass.
#[derive(Debug, Clone, Copy)]
pub struct CompletionNodes {
    pub generated_x: Var,
    pub generated_y: Var,
    pub completed_x: Var,
    pub completed_y: Var,
    pub loss_x: Option<Var>,
    pub loss_y: Option<Var>,
}

pub fn self_attention_graph(
    vars: &AttentionVars,
    g: &mut Graph,
    input: Var,
    causal: bool,
) -> Result<Var> {
    let (t_len, d) = (g.value(input).rows(), g.value(input).cols());
    let q = g.matmul(input, vars.query)?;
    let k = g.matmul(input, vars.key)?;
    let v = g.matmul(input, vars.value)?;
    let scores = g.matmul_bt(q, k)?;
    let mut scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    if causal {
        let mask = g.constant(causal_scores(t_len));
        scores = g.add(scores, mask)?;
    }
    let weights = g.softmax_rows(scores);
    g.matmul(weights, v)
}

fn encode_graph(
    attn: &AttentionVars,
    encoder: &DbnVars,
    g: &mut Graph,
    input: Var,
    causal: bool,
) -> Result<Var> {
    let weights = self_attention_graph(attn, g, input, causal)?;
    let gated = g.mul(input, weights)?;
    let gated = g.softmax_rows(gated);
    dbn::transform_up_graph(encoder, g, gated)
}

pub fn completion_graph(
    model: &CompletionModel,
    vars: &CompletionVars,
    g: &mut Graph,
    x: &ModalityBatch,
    y: &ModalityBatch,
) -> Result<CompletionNodes> {
    check_batches(x, y, model)?;
    let input_x = g.constant(x.values.clone());
    let input_y = g.constant(y.values.clone());
    let code_x = encode_graph(&vars.attn_x, &vars.encoder_x, g, input_x, model.causal)?;
    let code_y = encode_graph(&vars.attn_y, &vars.encoder_y, g, input_y, model.causal)?;
    let generated_x = dbn::generate_down_graph(&model.gen_x, &vars.gen_x, g, code_y)?;
    let generated_y = dbn::generate_down_graph(&model.gen_y, &vars.gen_y, g, code_x)?;
    let completed_x = g.select(&x.mask, input_x, generated_x)?;
    let completed_y = g.select(&y.mask, input_y, generated_y)?;
    let loss_x = if x.mask.count_observed() > 0 {
        Some(g.masked_mse(generated_x, &x.values, &x.mask)?)
    } else {
        None
    };
    let loss_y = if y.mask.count_observed() > 0 {
        Some(g.masked_mse(generated_y, &y.values, &y.mask)?)
    } else {
        None
    };
    Ok(CompletionNodes {
        generated_x,
        generated_y,
        completed_x,
        completed_y,
        loss_x,
        loss_y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Parameters;
    use crate::rbm::RbmParams;

    fn model(seed: u64) -> CompletionModel {
        CompletionModel::new(
            3,
            4,
            &[5, 2],
            VisibleKind::BernoulliProb,
            &mut Rng::new(seed),
        )
        .unwrap()
    }

    fn unit_batch(rows: usize, cols: usize, seed: u64, modality: Modality) -> ModalityBatch {
        let mut rng = Rng::new(seed);
        let values = Matrix::from_fn(rows, cols, |_, _| rng.uniform());
        ModalityBatch::fully_observed(values, modality)
    }

    #[test]
    fn single_step_attention_is_value_projection() {
        let proj = AttentionProjection::new(3, &mut Rng::new(1));
        let input = Matrix::from_rows(&[vec![0.2, -0.4, 0.9]]);
        for causal in [true, false] {
            let w = self_attention_weights(&input, &proj, causal).unwrap();
            let expected = matmul(&input, &proj.value).unwrap();
            for (a, b) in w.as_slice().iter().zip(expected.as_slice()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_rows_give_identical_weights() {
        let proj = AttentionProjection::new(3, &mut Rng::new(2));
        let input = Matrix::from_fn(4, 3, |_, j| j as f64 * 0.3 - 0.1);
        for causal in [true, false] {
            let w = self_attention_weights(&input, &proj, causal).unwrap();
            for i in 1..4 {
                for j in 0..3 {
                    assert!((w[(i, j)] - w[(0, j)]).abs() < 1e-14);
                }
            }
        }
        let zero = self_attention_weights(&input, &AttentionProjection::zeros(3), true).unwrap();
        assert_eq!(zero, Matrix::zeros(4, 3));
    }

    #[test]
    fn causal_attention_ignores_later_steps() {
        let proj = AttentionProjection::new(3, &mut Rng::new(3));
        let input = Matrix::randn(5, 3, 1.0, &mut Rng::new(4));
        let mut altered = input.clone();
        altered[(4, 0)] += 3.0;
        let a = self_attention_weights(&input, &proj, true).unwrap();
        let b = self_attention_weights(&altered, &proj, true).unwrap();
        assert_eq!(a.slice_rows(0, 4), b.slice_rows(0, 4));
    }

    #[test]
    fn attended_input_examples() {
        let i = Matrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]]);
        let w = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, 3f64.ln(), 7.0]]);
        let a = attended_input(&i, &w).unwrap();
        for j in 0..3 {
            assert!((a[(0, j)] - 1.0 / 3.0).abs() < 1e-15);
        }
        let two = attended_input(
            &Matrix::from_rows(&[vec![1.0, 1.0]]),
            &Matrix::from_rows(&[vec![0.0, 3f64.ln()]]),
        )
        .unwrap();
        assert!((two[(0, 0)] - 0.25).abs() < 1e-12);
        assert!((two[(0, 1)] - 0.75).abs() < 1e-12);
        assert!(attended_input(&i, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn encode_hidden_saturation() {
        let attn = Matrix::filled(3, 2, 0.5);
        let mut low = RbmParams::zeros(2, 4, VisibleKind::BernoulliProb);
        low.hidden_bias = Matrix::filled(1, 4, -50.0);
        let mut high = low.clone();
        high.hidden_bias = Matrix::filled(1, 4, 50.0);
        let mut rng = Rng::new(5);
        let stack = |p| DbnStack::from_layers(vec![p]).unwrap();
        assert_eq!(
            encode_hidden(&attn, &stack(low), &mut rng).unwrap(),
            Matrix::zeros(3, 4)
        );
        assert_eq!(
            encode_hidden(&attn, &stack(high), &mut rng).unwrap(),
            Matrix::filled(3, 4, 1.0)
        );
    }

    #[test]
    fn zero_generator_gives_half() {
        let gen = DbnStack::from_layers(vec![
            RbmParams::zeros(4, 3, VisibleKind::BernoulliProb),
            RbmParams::zeros(3, 2, VisibleKind::BernoulliProb),
        ])
        .unwrap();
        let h = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let a = complete_modality(&h, &gen, &mut Rng::new(1), false).unwrap();
        let b = complete_modality(&h, &gen, &mut Rng::new(2), false).unwrap();
        assert_eq!(a, Matrix::filled(2, 4, 0.5));
        assert_eq!(a, b);
    }

    #[test]
    fn modal_loss_examples() {
        let mask = Mask::from_vec(1, 3, vec![true, true, false]);
        let batch =
            ModalityBatch::new(Matrix::row_vector(&[3.0, 4.0, 9.0]), mask, Modality::Y).unwrap();
        assert_eq!(batch.values[(0, 2)], 0.0);
        assert_eq!(modal_loss(&Matrix::zeros(1, 3), &batch).unwrap(), 12.5);
        assert_eq!(
            modal_loss(&Matrix::row_vector(&[3.0, 4.0, 100.0]), &batch).unwrap(),
            0.0
        );
        assert_eq!(
            modal_loss(&Matrix::row_vector(&[0.0, 0.0, -7.0]), &batch).unwrap(),
            12.5
        );

        let empty =
            ModalityBatch::new(Matrix::zeros(1, 2), Mask::all(1, 2, false), Modality::X).unwrap();
        assert!(matches!(
            modal_loss(&Matrix::zeros(1, 2), &empty),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn fully_observed_completion_is_identity() {
        let m = model(6);
        let x = unit_batch(5, 3, 7, Modality::X);
        let y = unit_batch(5, 4, 8, Modality::Y);
        for mode in [CompletionMode::Sampled, CompletionMode::Expectation] {
            let out = run_completion(&x, &y, &m, &mut Rng::new(9), mode).unwrap();
            assert_eq!(out.completed_x, x.values);
            assert_eq!(out.completed_y, y.values);
        }
    }

    #[test]
    fn fully_missing_modality_is_all_generated() {
        let m = model(10);
        let x = unit_batch(5, 3, 11, Modality::X);
        let y =
            ModalityBatch::new(Matrix::zeros(5, 4), Mask::all(5, 4, false), Modality::Y).unwrap();
        let out = run_completion(&x, &y, &m, &mut Rng::new(12), CompletionMode::Sampled).unwrap();
        assert_eq!(out.completed_y, out.generated_y);
        assert!(out.loss_y.is_none());
        assert!(out.loss_x.is_some());
    }

    #[test]
    fn sampled_completion_is_reproducible() {
        let m = model(13);
        let x = unit_batch(6, 3, 14, Modality::X);
        let y = unit_batch(6, 4, 15, Modality::Y);
        let a = run_completion(&x, &y, &m, &mut Rng::new(16), CompletionMode::Sampled).unwrap();
        let b = run_completion(&x, &y, &m, &mut Rng::new(16), CompletionMode::Sampled).unwrap();
        assert_eq!(a, b);
        for v in a.generated_y.as_slice() {
            assert!(*v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn graph_matches_expectation_mode() {
        let m = model(17);
        let mut x = unit_batch(6, 3, 18, Modality::X);
        let mut y = unit_batch(6, 4, 19, Modality::Y);
        x.mask.set(2, 1, false);
        x.values[(2, 1)] = 0.0;
        for i in 0..6 {
            y.mask.set(i, i % 4, false);
            y.values[(i, i % 4)] = 0.0;
        }
        let plain =
            run_completion(&x, &y, &m, &mut Rng::new(0), CompletionMode::Expectation).unwrap();
        let mut g = Graph::new();
        let vars = m.bind(&mut g);
        let nodes = completion_graph(&m, &vars, &mut g, &x, &y).unwrap();
        let close = |a: &Matrix, b: &Matrix| {
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .all(|(p, q)| (p - q).abs() < 1e-12)
        };
        assert!(close(g.value(nodes.completed_x), &plain.completed_x));
        assert!(close(g.value(nodes.completed_y), &plain.completed_y));
        assert!((g.scalar(nodes.loss_y.unwrap()) - plain.loss_y.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mismatched_latent_widths_rejected() {
        let mut rng = Rng::new(20);
        let m = model(21);
        let wrong = DbnStack::new(&[4, 5, 3], VisibleKind::BernoulliProb, &mut rng).unwrap();
        assert!(CompletionModel::from_parts(
            m.attn_x,
            m.attn_y,
            m.encoder_x,
            m.encoder_y,
            m.gen_x,
            wrong,
            true
        )
        .is_err());
    }
}
