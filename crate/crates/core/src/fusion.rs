//! Cross-modal attention fusion: queries and keys from the complete modality,
//! values from the incomplete one, combined with a projection of both
//! decoder outputs.

use crate::decoders::{linear_graph, LinearParams};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::numerics::{layer_norm_rows, matmul, matmul_bt, softmax_rows, Matrix, Rng};
use crate::params::{impl_parameters, Parameters};

pub const DEFAULT_NORM_EPS: f64 = 1e-5;

/// Per-head projections, each `d_model × d_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

impl_parameters!(HeadParams => HeadVars { w_q: Matrix, w_k: Matrix, w_v: Matrix });

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub heads: Vec<HeadParams>,
    /// Output projection of the concatenated heads, `H·d_k → d_model`.
    pub output: LinearParams,
    /// `d_model → d_fusion`, applied to the normalised attention output.
    pub map: LinearParams,
    /// `(d_x_dec + d_y_dec) → d_fusion`, applied to both decoder outputs.
    pub decoder_proj: LinearParams,
    pub eps: f64,
}

impl_parameters!(FusionParams => FusionVars {
    heads: Vec<HeadParams>,
    output: LinearParams,
    map: LinearParams,
    decoder_proj: LinearParams,
});

impl FusionParams {
    pub fn new(
        d_model: usize,
        heads: usize,
        d_k: usize,
        d_fusion: usize,
        d_decoders: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || d_k == 0 || heads * d_k != d_model {
            return Err(Error::Config(format!(
                "{heads} heads of width {d_k} do not cover model dim {d_model}"
            )));
        }
        let std = 1.0 / (d_model as f64).sqrt();
        let heads = (0..heads)
            .map(|_| HeadParams {
                w_q: Matrix::randn(d_model, d_k, std, rng),
                w_k: Matrix::randn(d_model, d_k, std, rng),
                w_v: Matrix::randn(d_model, d_k, std, rng),
            })
            .collect();
        Ok(Self {
            heads,
            output: LinearParams::new(d_model, d_model, rng),
            map: LinearParams::new(d_model, d_fusion, rng),
            decoder_proj: LinearParams::new(d_decoders, d_fusion, rng),
            eps: DEFAULT_NORM_EPS,
        })
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn d_k(&self) -> usize {
        self.heads[0].w_q.cols()
    }

    pub fn d_model(&self) -> usize {
        self.heads[0].w_q.rows()
    }

    pub fn d_fusion(&self) -> usize {
        self.map.d_out()
    }
}

/// `softmax(QKᵀ/√d_k) · Norm(V)`.
pub fn attention_dbn(q: &Matrix, k: &Matrix, v: &Matrix, eps: f64) -> Result<Matrix> {
    attention_dbn_weighted(q, k, v, eps).map(|(out, _)| out)
}

/// [`attention_dbn`] together with its row-stochastic weight matrix.
pub fn attention_dbn_weighted(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    eps: f64,
) -> Result<(Matrix, Matrix)> {
    if q.cols() != k.cols() {
        return Err(Error::shape("attention_dbn", q.shape(), k.shape()));
    }
    if k.rows() != v.rows() {
        return Err(Error::shape("attention_dbn", k.shape(), v.shape()));
    }
    let scale = 1.0 / (q.cols().max(1) as f64).sqrt();
    let weights = softmax_rows(&matmul_bt(q, k)?.scale(scale));
    let out = matmul(&weights, &layer_norm_rows(v, eps))?;
    Ok((out, weights))
}

/// Concatenated per-head outputs before the output projection, plus each
/// head's attention weights.
pub fn multi_head_heads(
    complete: &Matrix,
    missing: &Matrix,
    params: &FusionParams,
) -> Result<(Matrix, Vec<Matrix>)> {
    if complete.rows() != missing.rows() {
        return Err(Error::shape(
            "multi_head",
            complete.shape(),
            missing.shape(),
        ));
    }
    let mut outs = Vec::with_capacity(params.head_count());
    let mut weights = Vec::with_capacity(params.head_count());
    for head in &params.heads {
        let q = matmul(complete, &head.w_q)?;
        let k = matmul(complete, &head.w_k)?;
        let v = matmul(missing, &head.w_v)?;
        let (o, w) = attention_dbn_weighted(&q, &k, &v, params.eps)?;
        outs.push(o);
        weights.push(w);
    }
    let refs: Vec<&Matrix> = outs.iter().collect();
    Ok((Matrix::concat_cols(&refs)?, weights))
}

pub fn multi_head(complete: &Matrix, missing: &Matrix, params: &FusionParams) -> Result<Matrix> {
    let (joined, _) = multi_head_heads(complete, missing, params)?;
    matmul(&joined, &params.output.weight)?.add_row(&params.output.bias)
}

/// `Map(Norm(multi_attn)) + P([MC_x | MC_y])`.
pub fn fuse(
    multi_attn: &Matrix,
    mc_x: &Matrix,
    mc_y: &Matrix,
    params: &FusionParams,
) -> Result<Matrix> {
    if multi_attn.rows() != mc_x.rows() || mc_x.rows() != mc_y.rows() {
        return Err(Error::shape("fuse", multi_attn.shape(), mc_y.shape()));
    }
    let normed = layer_norm_rows(multi_attn, params.eps);
    let mapped = matmul(&normed, &params.map.weight)?.add_row(&params.map.bias)?;
    let both = Matrix::concat_cols(&[mc_x, mc_y])?;
    let projected =
        matmul(&both, &params.decoder_proj.weight)?.add_row(&params.decoder_proj.bias)?;
    mapped.add(&projected)
}

pub fn attention_dbn_graph(g: &mut Graph, q: Var, k: Var, v: Var, eps: f64) -> Result<Var> {
    let d_k = g.value(q).cols().max(1);
    let scores = g.matmul_bt(q, k)?;
    let scores = g.scale(scores, 1.0 / (d_k as f64).sqrt());
    let weights = g.softmax_rows(scores);
    let normed = g.layer_norm_rows(v, eps);
    g.matmul(weights, normed)
}

pub fn multi_head_graph(
    params: &FusionParams,
    vars: &FusionVars,
    g: &mut Graph,
    complete: Var,
    missing: Var,
) -> Result<Var> {
    let mut outs = Vec::with_capacity(vars.heads.len());
    for head in &vars.heads {
        let q = g.matmul(complete, head.w_q)?;
        let k = g.matmul(complete, head.w_k)?;
        let v = g.matmul(missing, head.w_v)?;
        outs.push(attention_dbn_graph(g, q, k, v, params.eps)?);
    }
    let joined = g.concat_cols(&outs)?;
    linear_graph(&vars.output, g, joined)
}

pub fn fuse_graph(
    params: &FusionParams,
    vars: &FusionVars,
    g: &mut Graph,
    multi_attn: Var,
    mc_x: Var,
    mc_y: Var,
) -> Result<Var> {
    let normed = g.layer_norm_rows(multi_attn, params.eps);
    let mapped = linear_graph(&vars.map, g, normed)?;
    let both = g.concat_cols(&[mc_x, mc_y])?;
    let projected = linear_graph(&vars.decoder_proj, g, both)?;
    g.add(mapped, projected)
}

/// Runs [`multi_head_graph`] then [`fuse_graph`], routing the complete
/// modality's decoder output to queries and keys.
pub fn fusion_graph(
    params: &FusionParams,
    vars: &FusionVars,
    g: &mut Graph,
    mc_x: Var,
    mc_y: Var,
    x_is_complete: bool,
) -> Result<Var> {
    let (complete, missing) = if x_is_complete {
        (mc_x, mc_y)
    } else {
        (mc_y, mc_x)
    };
    let multi = multi_head_graph(params, vars, g, complete, missing)?;
    fuse_graph(params, vars, g, multi, mc_x, mc_y)
}

pub fn fusion_forward(
    params: &FusionParams,
    mc_x: &Matrix,
    mc_y: &Matrix,
    x_is_complete: bool,
) -> Result<Matrix> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let x = g.constant(mc_x.clone());
    let y = g.constant(mc_y.clone());
    let out = fusion_graph(params, &vars, &mut g, x, y, x_is_complete)?;
    Ok(g.value(out).clone())
}
