//! Sequence decoders applied to completed modalities: LSTM, a single pre-norm
//! Transformer block, and a per-step linear map.
//!
//! All forwards are recorded on a [`Graph`], which supplies the paired
//! analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::numerics::{Matrix, Rng};
use crate::params::{impl_parameters, Parameters};

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::randn(rows, cols, 1.0 / (rows.max(1) as f64).sqrt(), rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Transformer,
    Lstm,
    Linear,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Transformer => "transformer",
            DecoderKind::Lstm => "lstm",
            DecoderKind::Linear => "linear",
        }
    }
}

// ---------------------------------------------------------------------------
// Linear

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// `d_in × d_out`
    pub weight: Matrix,
    /// `1 × d_out`
    pub bias: Matrix,
}

impl_parameters!(LinearParams => LinearVars { weight: Matrix, bias: Matrix });

impl LinearParams {
    pub fn new(d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        Self {
            weight: glorot(d_in, d_out, rng),
            bias: Matrix::zeros(1, d_out),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(d_in, d_out),
            bias: Matrix::zeros(1, d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }
}

pub fn linear_graph(vars: &LinearVars, g: &mut Graph, x: Var) -> Result<Var> {
    g.affine(x, vars.weight, vars.bias)
}

pub fn linear_forward(params: &LinearParams, seq: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let x = g.constant(seq.clone());
    let y = linear_graph(&vars, &mut g, x)?;
    Ok(g.value(y).clone())
}

// ---------------------------------------------------------------------------
// LSTM

/// Single-layer LSTM. Gate blocks are packed column-wise in the order
/// input, forget, output, cell candidate, each `d_h` wide.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `d_in × 4·d_h`
    pub w_input: Matrix,
    /// `d_h × 4·d_h`
    pub w_hidden: Matrix,
    /// `1 × 4·d_h`
    pub bias: Matrix,
}

impl_parameters!(LstmParams => LstmVars { w_input: Matrix, w_hidden: Matrix, bias: Matrix });

impl LstmParams {
    pub fn new(d_in: usize, d_h: usize, rng: &mut Rng) -> Self {
        Self {
            w_input: glorot(d_in, 4 * d_h, rng),
            w_hidden: glorot(d_h, 4 * d_h, rng),
            bias: Matrix::zeros(1, 4 * d_h),
        }
    }

    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        Self {
            w_input: Matrix::zeros(d_in, 4 * d_h),
            w_hidden: Matrix::zeros(d_h, 4 * d_h),
            bias: Matrix::zeros(1, 4 * d_h),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w_input.rows()
    }

    pub fn d_hidden(&self) -> usize {
        self.w_hidden.rows()
    }
}

/// One LSTM step from pre-projected gate inputs `z` (`batch × 4·d_h`).
/// A missing state stands for the zero initial state.
pub fn lstm_cell_graph(
    vars: &LstmVars,
    g: &mut Graph,
    z: Var,
    state: Option<(Var, Var)>,
) -> Result<(Var, Var)> {
    let d_h = g.value(z).cols() / 4;
    let mut z = z;
    if let Some((h, _)) = state {
        let rec = g.matmul(h, vars.w_hidden)?;
        z = g.add(z, rec)?;
    }
    let i_pre = g.slice_cols(z, 0, d_h);
    let f_pre = g.slice_cols(z, d_h, 2 * d_h);
    let o_pre = g.slice_cols(z, 2 * d_h, 3 * d_h);
    let c_pre = g.slice_cols(z, 3 * d_h, 4 * d_h);
    let i_gate = g.sigmoid(i_pre);
    let o_gate = g.sigmoid(o_pre);
    let cand = g.tanh(c_pre);
    let fresh = g.mul(i_gate, cand)?;
    let cell = match state {
        Some((_, prev)) => {
            let f_gate = g.sigmoid(f_pre);
            let kept = g.mul(f_gate, prev)?;
            g.add(kept, fresh)?
        }
        None => fresh,
    };
    let squashed = g.tanh(cell);
    let hidden = g.mul(o_gate, squashed)?;
    Ok((hidden, cell))
}

/// Runs a batch of equal-length sequences given step by step; each entry of
/// `steps` is `batch × d_in`. Returns the hidden state after every step.
pub fn lstm_steps_graph(
    params: &LstmParams,
    vars: &LstmVars,
    g: &mut Graph,
    steps: &[Var],
) -> Result<Vec<Var>> {
    let mut state = None;
    let mut outputs = Vec::with_capacity(steps.len());
    for &step in steps {
        if g.value(step).cols() != params.d_in() {
            return Err(Error::shape(
                "lstm_forward",
                g.value(step).shape(),
                params.w_input.shape(),
            ));
        }
        let z = g.affine(step, vars.w_input, vars.bias)?;
        let next = lstm_cell_graph(vars, g, z, state)?;
        outputs.push(next.0);
        state = Some(next);
    }
    Ok(outputs)
}

/// Hidden states for every step, zero initial state, `T × d_h`.
pub fn lstm_graph(params: &LstmParams, vars: &LstmVars, g: &mut Graph, seq: Var) -> Result<Var> {
    let d_h = params.d_hidden();
    let t_len = g.value(seq).rows();
    if g.value(seq).cols() != params.d_in() {
        return Err(Error::shape(
            "lstm_forward",
            g.value(seq).shape(),
            params.w_input.shape(),
        ));
    }
    if t_len == 0 {
        return Ok(g.constant(Matrix::zeros(0, d_h)));
    }

    let projected = g.affine(seq, vars.w_input, vars.bias)?;
    let mut state = None;
    let mut outputs = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let z = g.row(projected, t);
        let next = lstm_cell_graph(vars, g, z, state)?;
        outputs.push(next.0);
        state = Some(next);
    }
    g.stack_rows(&outputs)
}

pub fn lstm_forward(params: &LstmParams, seq: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let x = g.constant(seq.clone());
    let y = lstm_graph(params, &vars, &mut g, x)?;
    Ok(g.value(y).clone())
}

// ---------------------------------------------------------------------------
// Transformer

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Matrix,
    pub bias: Matrix,
}

impl_parameters!(LayerNormParams => LayerNormVars { gain: Matrix, bias: Matrix });

impl LayerNormParams {
    pub fn new(d: usize) -> Self {
        Self {
            gain: Matrix::filled(1, d, 1.0),
            bias: Matrix::zeros(1, d),
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn layer_norm_graph(vars: &LayerNormVars, g: &mut Graph, x: Var) -> Result<Var> {
    let n = g.layer_norm_rows(x, LAYER_NORM_EPS);
    let scaled = g.mul_row(n, vars.gain)?;
    g.add_row(scaled, vars.bias)
}

/// One pre-norm Transformer block: `x + MHSA(LN(x))`, then `+ FFN(LN(·))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlockParams {
    pub heads: usize,
    pub positional: bool,
    /// Adapts `d_in ≠ d_model` inputs.
    pub in_proj: Option<LinearParams>,
    pub ln_attn: LayerNormParams,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub b_o: Matrix,
    pub ln_ff: LayerNormParams,
    pub ff_in: LinearParams,
    pub ff_out: LinearParams,
}

impl_parameters!(TransformerBlockParams => TransformerVars {
    in_proj: Option<LinearParams>,
    ln_attn: LayerNormParams,
    w_q: Matrix,
    w_k: Matrix,
    w_v: Matrix,
    w_o: Matrix,
    b_o: Matrix,
    ln_ff: LayerNormParams,
    ff_in: LinearParams,
    ff_out: LinearParams,
});

impl TransformerBlockParams {
    pub fn new(d_in: usize, d_model: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!(
                "model dim {d_model} is not divisible by {heads} heads"
            )));
        }
        let in_proj = (d_in != d_model).then(|| LinearParams::new(d_in, d_model, rng));
        Ok(Self {
            heads,
            positional: true,
            in_proj,
            ln_attn: LayerNormParams::new(d_model),
            w_q: glorot(d_model, d_model, rng),
            w_k: glorot(d_model, d_model, rng),
            w_v: glorot(d_model, d_model, rng),
            w_o: glorot(d_model, d_model, rng),
            b_o: Matrix::zeros(1, d_model),
            ln_ff: LayerNormParams::new(d_model),
            ff_in: LinearParams::new(d_model, 4 * d_model, rng),
            ff_out: LinearParams::new(4 * d_model, d_model, rng),
        })
    }

    pub fn d_model(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d_in(&self) -> usize {
        self.in_proj
            .as_ref()
            .map_or(self.d_model(), LinearParams::d_in)
    }
}

/// Sinusoidal encoding: `sin(t/10000^(2i/d))` on even columns, `cos` on odd.
pub fn positional_encoding(t_len: usize, d: usize) -> Matrix {
    Matrix::from_fn(t_len, d, |t, j| {
        let pair = (j / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * pair / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Multi-head scaled dot-product self-attention over all time steps.
fn self_attention_graph(
    heads: usize,
    vars: &TransformerVars,
    g: &mut Graph,
    x: Var,
) -> Result<Var> {
    let d_model = g.value(x).cols();
    let d_k = d_model / heads;
    let q = g.matmul(x, vars.w_q)?;
    let k = g.matmul(x, vars.w_k)?;
    let v = g.matmul(x, vars.w_v)?;
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * d_k, (h + 1) * d_k);
        let qh = g.slice_cols(q, lo, hi);
        let kh = g.slice_cols(k, lo, hi);
        let vh = g.slice_cols(v, lo, hi);
        let scores = g.matmul_bt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let weights = g.softmax_rows(scores);
        outs.push(g.matmul(weights, vh)?);
    }
    let joined = g.concat_cols(&outs)?;
    g.affine(joined, vars.w_o, vars.b_o)
}

pub fn transformer_graph(
    params: &TransformerBlockParams,
    vars: &TransformerVars,
    g: &mut Graph,
    seq: Var,
) -> Result<Var> {
    let (t_len, cols) = (g.value(seq).rows(), g.value(seq).cols());
    if cols != params.d_in() {
        return Err(Error::shape(
            "transformer_forward",
            g.value(seq).shape(),
            params.w_q.shape(),
        ));
    }
    let mut x = match &vars.in_proj {
        Some(p) => linear_graph(p, g, seq)?,
        None => seq,
    };
    if params.positional {
        let pe = g.constant(positional_encoding(t_len, params.d_model()));
        x = g.add(x, pe)?;
    }
    let normed = layer_norm_graph(&vars.ln_attn, g, x)?;
    let attended = self_attention_graph(params.heads, vars, g, normed)?;
    let x = g.add(x, attended)?;
    let normed = layer_norm_graph(&vars.ln_ff, g, x)?;
    let hidden = linear_graph(&vars.ff_in, g, normed)?;
    let hidden = g.relu(hidden);
    let ff = linear_graph(&vars.ff_out, g, hidden)?;
    g.add(x, ff)
}

pub fn transformer_forward(params: &TransformerBlockParams, seq: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let x = g.constant(seq.clone());
    let y = transformer_graph(params, &vars, &mut g, x)?;
    Ok(g.value(y).clone())
}

// ---------------------------------------------------------------------------
// Family

#[derive(Debug, Clone, PartialEq)]
pub enum Decoder {
    Lstm(LstmParams),
    Transformer(TransformerBlockParams),
    Linear(LinearParams),
}

#[derive(Debug, Clone)]
pub enum DecoderVars {
    Lstm(LstmVars),
    Transformer(TransformerVars),
    Linear(LinearVars),
}

impl Decoder {
    /// Decoder mapping `d_in` features to `d_out` per time step.
    pub fn new(
        kind: DecoderKind,
        d_in: usize,
        d_out: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(match kind {
            DecoderKind::Lstm => Decoder::Lstm(LstmParams::new(d_in, d_out, rng)),
            DecoderKind::Transformer => {
                Decoder::Transformer(TransformerBlockParams::new(d_in, d_out, heads, rng)?)
            }
            DecoderKind::Linear => Decoder::Linear(LinearParams::new(d_in, d_out, rng)),
        })
    }

    pub fn kind(&self) -> DecoderKind {
        match self {
            Decoder::Lstm(_) => DecoderKind::Lstm,
            Decoder::Transformer(_) => DecoderKind::Transformer,
            Decoder::Linear(_) => DecoderKind::Linear,
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Decoder::Lstm(p) => p.d_hidden(),
            Decoder::Transformer(p) => p.d_model(),
            Decoder::Linear(p) => p.d_out(),
        }
    }

    pub fn graph(&self, vars: &DecoderVars, g: &mut Graph, seq: Var) -> Result<Var> {
        match (self, vars) {
            (Decoder::Lstm(p), DecoderVars::Lstm(v)) => lstm_graph(p, v, g, seq),
            (Decoder::Transformer(p), DecoderVars::Transformer(v)) => {
                transformer_graph(p, v, g, seq)
            }
            (Decoder::Linear(_), DecoderVars::Linear(v)) => linear_graph(v, g, seq),
            _ => Err(Error::Config(
                "decoder bound to variables of another kind".into(),
            )),
        }
    }

    pub fn forward(&self, seq: &Matrix) -> Result<Matrix> {
        match self {
            Decoder::Lstm(p) => lstm_forward(p, seq),
            Decoder::Transformer(p) => transformer_forward(p, seq),
            Decoder::Linear(p) => linear_forward(p, seq),
        }
    }
}

impl Parameters for Decoder {
    type Vars = DecoderVars;

    fn bind(&self, g: &mut Graph) -> DecoderVars {
        match self {
            Decoder::Lstm(p) => DecoderVars::Lstm(p.bind(g)),
            Decoder::Transformer(p) => DecoderVars::Transformer(p.bind(g)),
            Decoder::Linear(p) => DecoderVars::Linear(p.bind(g)),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Matrix)) {
        match self {
            Decoder::Lstm(p) => p.visit(prefix, f),
            Decoder::Transformer(p) => p.visit(prefix, f),
            Decoder::Linear(p) => p.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix)) {
        match self {
            Decoder::Lstm(p) => p.visit_mut(prefix, f),
            Decoder::Transformer(p) => p.visit_mut(prefix, f),
            Decoder::Linear(p) => p.visit_mut(prefix, f),
        }
    }

    fn visit_vars(vars: &DecoderVars, f: &mut dyn FnMut(Var)) {
        match vars {
            DecoderVars::Lstm(v) => LstmParams::visit_vars(v, f),
            DecoderVars::Transformer(v) => TransformerBlockParams::visit_vars(v, f),
            DecoderVars::Linear(v) => LinearParams::visit_vars(v, f),
        }
    }
}
