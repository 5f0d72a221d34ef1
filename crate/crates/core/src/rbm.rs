//! Restricted Boltzmann machine with factorised conditionals and CD-k training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::numerics::{
    bernoulli_sample, matmul, matmul_at, matmul_bt, sigmoid, softplus, Matrix, Rng,
};
use crate::params::impl_parameters;

/// Visible-unit family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VisibleKind {
    /// Visible values in `[0, 1]` treated as Bernoulli probabilities.
    #[default]
    BernoulliProb,
    /// Standardised real values with unit-variance Gaussian visibles.
    GaussianStandardized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    /// `n_visible × n_hidden`
    pub weights: Matrix,
    /// `1 × n_visible`
    pub visible_bias: Matrix,
    /// `1 × n_hidden`
    pub hidden_bias: Matrix,
    pub visible_kind: VisibleKind,
}

impl_parameters!(RbmParams => RbmVars {
    weights: Matrix,
    visible_bias: Matrix,
    hidden_bias: Matrix,
});

/// Standard deviation of the Gaussian weight initialisation.
pub const INIT_WEIGHT_STD: f64 = 0.01;

impl RbmParams {
    /// Weights drawn from N(0, 0.01²) in row-major order, zero biases.
    pub fn new(n_visible: usize, n_hidden: usize, kind: VisibleKind, rng: &mut Rng) -> Self {
        Self {
            weights: Matrix::randn(n_visible, n_hidden, INIT_WEIGHT_STD, rng),
            visible_bias: Matrix::zeros(1, n_visible),
            hidden_bias: Matrix::zeros(1, n_hidden),
            visible_kind: kind,
        }
    }

    pub fn zeros(n_visible: usize, n_hidden: usize, kind: VisibleKind) -> Self {
        Self {
            weights: Matrix::zeros(n_visible, n_hidden),
            visible_bias: Matrix::zeros(1, n_visible),
            hidden_bias: Matrix::zeros(1, n_hidden),
            visible_kind: kind,
        }
    }

    pub fn n_visible(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.cols()
    }

    fn check_visible(&self, v: &Matrix, op: &'static str) -> Result<()> {
        if v.cols() != self.n_visible() {
            return Err(Error::shape(op, v.shape(), self.weights.shape()));
        }
        Ok(())
    }

    fn check_hidden(&self, h: &Matrix, op: &'static str) -> Result<()> {
        if h.cols() != self.n_hidden() {
            return Err(Error::shape(op, h.shape(), self.weights.shape()));
        }
        Ok(())
    }
}

/// `p(h = 1 | v) = σ(vW + b_h)`.
pub fn prop_up(params: &RbmParams, v: &Matrix) -> Result<Matrix> {
    params.check_visible(v, "prop_up")?;
    Ok(matmul(v, &params.weights)?
        .add_row(&params.hidden_bias)?
        .map(sigmoid))
}

/// Visible probabilities `σ(hWᵀ + b_v)`, or the linear mean for Gaussian visibles.
pub fn prop_down(params: &RbmParams, h: &Matrix) -> Result<Matrix> {
    params.check_hidden(h, "prop_down")?;
    let pre = matmul_bt(h, &params.weights)?.add_row(&params.visible_bias)?;
    Ok(match params.visible_kind {
        VisibleKind::BernoulliProb => pre.map(sigmoid),
        VisibleKind::GaussianStandardized => pre,
    })
}

/// Differentiable `σ(vW + b_h)` on a graph.
pub fn prop_up_graph(vars: &RbmVars, g: &mut Graph, v: Var) -> Result<Var> {
    let pre = g.affine(v, vars.weights, vars.hidden_bias)?;
    Ok(g.sigmoid(pre))
}

/// Differentiable visible reconstruction on a graph.
pub fn prop_down_graph(vars: &RbmVars, kind: VisibleKind, g: &mut Graph, h: Var) -> Result<Var> {
    let hw = g.matmul_bt(h, vars.weights)?;
    let pre = g.add_row(hw, vars.visible_bias)?;
    Ok(match kind {
        VisibleKind::BernoulliProb => g.sigmoid(pre),
        VisibleKind::GaussianStandardized => pre,
    })
}

fn mean_squared_difference(a: &Matrix, b: &Matrix) -> Result<f64> {
    let d = a.sub(b)?;
    Ok(d.as_slice().iter().map(|v| v * v).sum::<f64>() / d.len().max(1) as f64)
}

/// One CD-k step on `batch`.
///
/// The chain samples hidden states with [`bernoulli_sample`] (draws in
/// row-major order, one matrix per step `1..=k`, the last step's hidden
/// probabilities are not sampled) and keeps visible reconstructions as
/// probabilities. Gradient statistics use probabilities at both ends.
/// Returns the updated parameters and the mean squared error of the first
/// reconstruction.
pub fn cd_k_update(
    params: &RbmParams,
    batch: &Matrix,
    k: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<(RbmParams, f64)> {
    if k == 0 {
        return Err(Error::Config("contrastive divergence needs k ≥ 1".into()));
    }
    if !(lr >= 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be ≥ 0, got {lr}"
        )));
    }
    params.check_visible(batch, "cd_k_update")?;

    let ph_data = prop_up(params, batch)?;
    let mut h = bernoulli_sample(&ph_data, rng)?;
    let mut recon_error = 0.0;
    let mut v_model = batch.clone();
    let mut ph_model = ph_data.clone();
    for step in 1..=k {
        v_model = prop_down(params, &h)?;
        if step == 1 {
            recon_error = mean_squared_difference(batch, &v_model)?;
        }
        ph_model = prop_up(params, &v_model)?;
        if step < k {
            h = bernoulli_sample(&ph_model, rng)?;
        }
    }

    if lr == 0.0 {
        return Ok((params.clone(), recon_error));
    }

    let n = batch.rows().max(1) as f64;
    let positive = matmul_at(batch, &ph_data)?;
    let negative = matmul_at(&v_model, &ph_model)?;
    let step = lr / n;

    let mut next = params.clone();
    next.weights.axpy(step, &positive)?;
    next.weights.axpy(-step, &negative)?;
    next.visible_bias.axpy(step, &batch.sum_rows())?;
    next.visible_bias.axpy(-step, &v_model.sum_rows())?;
    next.hidden_bias.axpy(step, &ph_data.sum_rows())?;
    next.hidden_bias.axpy(-step, &ph_model.sum_rows())?;
    Ok((next, recon_error))
}

/// Deterministic mean-field reconstruction error, mean over all entries.
pub fn reconstruction_error(params: &RbmParams, batch: &Matrix) -> Result<f64> {
    let recon = prop_down(params, &prop_up(params, batch)?)?;
    mean_squared_difference(batch, &recon)
}

/// Per-row free energy `−v·b_vᵀ − Σ_j softplus((vW + b_h)_j)` as a `rows×1` matrix.
pub fn free_energy(params: &RbmParams, v: &Matrix) -> Result<Matrix> {
    if params.visible_kind != VisibleKind::BernoulliProb {
        return Err(Error::Unsupported(
            "free energy is only defined here for Bernoulli visibles".into(),
        ));
    }
    params.check_visible(v, "free_energy")?;
    let pre = matmul(v, &params.weights)?.add_row(&params.hidden_bias)?;
    Ok(Matrix::from_fn(v.rows(), 1, |i, _| {
        let visible: f64 = v
            .row(i)
            .iter()
            .zip(params.visible_bias.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        let hidden: f64 = pre.row(i).iter().map(|&x| softplus(x)).sum();
        -visible - hidden
    }))
}
