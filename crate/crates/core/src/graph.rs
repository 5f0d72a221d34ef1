//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every differentiable model in the crate records its forward pass on a
//! [`Graph`]; [`Graph::backward`] then walks the tape in reverse. Nodes built
//! only from constants are never differentiated.

use crate::error::{Error, Result, Shape};
use crate::numerics::{
    layer_norm_rows, matmul, matmul_at, matmul_bt, softmax_rows, Activation, Mask, Matrix,
};

/// Clamp floor applied to probabilities before taking logs in cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Softmax(Var),
    LayerNorm(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    StackRows(Vec<Var>),
    Select(Var, Var, Mask),
    MaskedMse(Var, Matrix, Mask, usize),
    CrossEntropy(Var, Matrix),
    SumScalars(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a backward pass: one optional gradient per node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Matrix {
        match self.get(v) {
            Some(m) => m.clone(),
            None => {
                let Shape(r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input; never differentiated.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul(self.value(a), self.value(b))?;
        let ng = self.grad_any(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul_bt(self.value(a), self.value(b))?;
        let ng = self.grad_any(&[a, b]);
        Ok(self.push(value, Op::MatMulBt(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.grad_any(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let ng = self.grad_any(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    /// Broadcast-add a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(row))?;
        let ng = self.grad_any(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), ng))
    }

    /// Broadcast-multiply every row of `a` by a `1×c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::shape("mul_row", av.shape(), rv.shape()));
        }
        let value = Matrix::from_fn(av.rows(), av.cols(), |i, j| av[(i, j)] * rv[(0, j)]);
        let ng = self.grad_any(&[a, row]);
        Ok(self.push(value, Op::MulRow(a, row), ng))
    }

    /// `x·w + b` with `b` a `1×out` row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let ng = self.grad_any(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.grad_any(&[a]);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn activation(&mut self, a: Var, f: Activation) -> Var {
        let value = self.value(a).map(|v| f.apply(v));
        let ng = self.grad_any(&[a]);
        self.push(value, Op::Act(a, f), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let ng = self.grad_any(&[a]);
        self.push(value, Op::Softmax(a), ng)
    }

    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let value = layer_norm_rows(self.value(a), eps);
        let ng = self.grad_any(&[a]);
        self.push(value, Op::LayerNorm(a, eps), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::concat_cols(&mats)?;
        let ng = self.grad_any(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice_cols(start, end);
        let ng = self.grad_any(&[a]);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice_rows(start, end);
        let ng = self.grad_any(&[a]);
        self.push(value, Op::SliceRows(a, start), ng)
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.slice_rows(a, i, i + 1)
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::concat_rows(&mats)?;
        let ng = self.grad_any(parts);
        Ok(self.push(value, Op::StackRows(parts.to_vec()), ng))
    }

    /// Entry-wise substitution: `observed` where the mask is set, `fill` elsewhere.
    pub fn select(&mut self, mask: &Mask, observed: Var, fill: Var) -> Result<Var> {
        let (o, f) = (self.value(observed), self.value(fill));
        o.same_shape(f, "select")?;
        if mask.rows() != o.rows() || mask.cols() != o.cols() {
            return Err(Error::shape(
                "select",
                o.shape(),
                Shape(mask.rows(), mask.cols()),
            ));
        }
        let value = Matrix::from_fn(o.rows(), o.cols(), |i, j| {
            if mask.get(i, j) {
                o[(i, j)]
            } else {
                f[(i, j)]
            }
        });
        let ng = self.grad_any(&[observed, fill]);
        Ok(self.push(value, Op::Select(observed, fill, mask.clone()), ng))
    }

    /// Mean of `(pred − target)²` over entries with `mask = true`.
    pub fn masked_mse(&mut self, pred: Var, target: &Matrix, mask: &Mask) -> Result<Var> {
        let p = self.value(pred);
        p.same_shape(target, "masked_mse")?;
        if mask.rows() != p.rows() || mask.cols() != p.cols() {
            return Err(Error::shape(
                "masked_mse",
                p.shape(),
                Shape(mask.rows(), mask.cols()),
            ));
        }
        let count = mask.count_observed();
        if count == 0 {
            return Err(Error::Degenerate(
                "masked loss over an empty mask".to_string(),
            ));
        }
        let mut total = 0.0;
        for (idx, (&pv, &tv)) in p.as_slice().iter().zip(target.as_slice()).enumerate() {
            if mask.as_slice()[idx] {
                total += (pv - tv) * (pv - tv);
            }
        }
        let value = Matrix::filled(1, 1, total / count as f64);
        let ng = self.grad_any(&[pred]);
        Ok(self.push(
            value,
            Op::MaskedMse(pred, target.clone(), mask.clone(), count),
            ng,
        ))
    }

    pub fn mse(&mut self, pred: Var, target: &Matrix) -> Result<Var> {
        let mask = Mask::all(target.rows(), target.cols(), true);
        self.masked_mse(pred, target, &mask)
    }

    /// `−(1/N) Σ y log max(p, 1e−12)` over rows of `probs`.
    pub fn cross_entropy(&mut self, probs: Var, onehot: &Matrix) -> Result<Var> {
        let p = self.value(probs);
        p.same_shape(onehot, "cross_entropy")?;
        let n = p.rows().max(1) as f64;
        let mut total = 0.0;
        for (&pv, &yv) in p.as_slice().iter().zip(onehot.as_slice()) {
            if yv != 0.0 {
                total -= yv * pv.max(PROB_FLOOR).ln();
            }
        }
        let value = Matrix::filled(1, 1, total / n);
        let ng = self.grad_any(&[probs]);
        Ok(self.push(value, Op::CrossEntropy(probs, onehot.clone()), ng))
    }

    /// Sum of `1×1` nodes.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Result<Var> {
        let mut total = 0.0;
        for &v in parts {
            let m = self.value(v);
            if m.rows() != 1 || m.cols() != 1 {
                return Err(Error::shape("sum_scalars", m.shape(), Shape(1, 1)));
            }
            total += m[(0, 0)];
        }
        let ng = self.grad_any(parts);
        Ok(self.push(
            Matrix::filled(1, 1, total),
            Op::SumScalars(parts.to_vec()),
            ng,
        ))
    }

    /// Reverse pass from a `1×1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.rows() != 1 || lv.cols() != 1 {
            return Err(Error::shape("backward", lv.shape(), Shape(1, 1)));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, dy: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let mut acc = |v: Var, g: Matrix| -> Result<()> {
            if !self.nodes[v.0].needs_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.axpy(1.0, &g),
                slot @ None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    acc(*a, matmul_bt(dy, self.value(*b))?)?;
                }
                if self.nodes[b.0].needs_grad {
                    acc(*b, matmul_at(self.value(*a), dy)?)?;
                }
            }
            Op::MatMulBt(a, b) => {
                if self.nodes[a.0].needs_grad {
                    acc(*a, matmul(dy, self.value(*b))?)?;
                }
                if self.nodes[b.0].needs_grad {
                    acc(*b, matmul_at(dy, self.value(*a))?)?;
                }
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone())?;
                acc(*b, dy.clone())?;
            }
            Op::Sub(a, b) => {
                acc(*a, dy.clone())?;
                acc(*b, dy.scale(-1.0))?;
            }
            Op::AddRow(a, row) => {
                acc(*a, dy.clone())?;
                acc(*row, dy.sum_rows())?;
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row));
                if self.nodes[a.0].needs_grad {
                    acc(
                        *a,
                        Matrix::from_fn(dy.rows(), dy.cols(), |i, j| dy[(i, j)] * rv[(0, j)]),
                    )?;
                }
                if self.nodes[row.0].needs_grad {
                    acc(*row, dy.hadamard(av)?.sum_rows())?;
                }
            }
            Op::Mul(a, b) => {
                acc(*a, dy.hadamard(self.value(*b))?)?;
                acc(*b, dy.hadamard(self.value(*a))?)?;
            }
            Op::Scale(a, s) => acc(*a, dy.scale(*s))?,
            Op::Act(a, f) => {
                let y = &node.value;
                let g = match f {
                    Activation::Sigmoid => dy.zip_map(y, "sigmoid'", |d, s| d * s * (1.0 - s))?,
                    Activation::Tanh => dy.zip_map(y, "tanh'", |d, t| d * (1.0 - t * t))?,
                    Activation::Relu => {
                        dy.zip_map(
                            self.value(*a),
                            "relu'",
                            |d, x| if x > 0.0 { d } else { 0.0 },
                        )?
                    }
                };
                acc(*a, g)?;
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut g = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let dot: f64 = dy.row(i).iter().zip(y.row(i)).map(|(d, s)| d * s).sum();
                    for ((o, &d), &s) in g.row_mut(i).iter_mut().zip(dy.row(i)).zip(y.row(i)) {
                        *o = s * (d - dot);
                    }
                }
                acc(*a, g)?;
            }
            Op::LayerNorm(a, eps) => {
                let x = self.value(*a);
                let y = &node.value;
                let n = x.cols() as f64;
                let mut g = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let xr = x.row(i);
                    let mu = xr.iter().sum::<f64>() / n;
                    let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let mean_dy = dy.row(i).iter().sum::<f64>() / n;
                    let mean_dyy = dy
                        .row(i)
                        .iter()
                        .zip(y.row(i))
                        .map(|(d, v)| d * v)
                        .sum::<f64>()
                        / n;
                    for j in 0..x.cols() {
                        g[(i, j)] = inv * (dy[(i, j)] - mean_dy - y[(i, j)] * mean_dyy);
                    }
                }
                acc(*a, g)?;
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    acc(p, dy.slice_cols(off, off + w))?;
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let src = self.value(*a);
                let mut g = Matrix::zeros(src.rows(), src.cols());
                for i in 0..dy.rows() {
                    g.row_mut(i)[*start..*start + dy.cols()].copy_from_slice(dy.row(i));
                }
                acc(*a, g)?;
            }
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let mut g = Matrix::zeros(src.rows(), src.cols());
                for i in 0..dy.rows() {
                    g.row_mut(start + i).copy_from_slice(dy.row(i));
                }
                acc(*a, g)?;
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    acc(p, dy.slice_rows(off, off + h))?;
                    off += h;
                }
            }
            Op::Select(observed, fill, mask) => {
                let keep = Matrix::from_fn(dy.rows(), dy.cols(), |i, j| {
                    if mask.get(i, j) {
                        dy[(i, j)]
                    } else {
                        0.0
                    }
                });
                let rest = dy.sub(&keep)?;
                acc(*observed, keep)?;
                acc(*fill, rest)?;
            }
            Op::MaskedMse(pred, target, mask, count) => {
                let p = self.value(*pred);
                let scale = 2.0 * dy[(0, 0)] / *count as f64;
                let g = Matrix::from_fn(p.rows(), p.cols(), |i, j| {
                    if mask.get(i, j) {
                        scale * (p[(i, j)] - target[(i, j)])
                    } else {
                        0.0
                    }
                });
                acc(*pred, g)?;
            }
            Op::CrossEntropy(probs, onehot) => {
                let p = self.value(*probs);
                let n = p.rows().max(1) as f64;
                let d = dy[(0, 0)];
                let g = p.zip_map(onehot, "cross_entropy'", |pv, yv| {
                    if yv != 0.0 && pv >= PROB_FLOOR {
                        -d * yv / (n * pv)
                    } else {
                        0.0
                    }
                })?;
                acc(*probs, g)?;
            }
            Op::SumScalars(parts) => {
                for &p in parts {
                    acc(p, dy.clone())?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    /// Central-difference check of `f` w.r.t. a single input matrix.
    fn check(f: impl Fn(&mut Graph, Var) -> Var, x: Matrix) {
        let mut g = Graph::new();
        let xv = g.param(x.clone());
        let loss = f(&mut g, xv);
        let grads = g.backward(loss).unwrap();
        let analytic = grads.wrt(xv);
        let h = 1e-5;
        for k in 0..x.len() {
            let eval = |delta: f64| {
                let mut xp = x.clone();
                xp.as_mut_slice()[k] += delta;
                let mut g = Graph::new();
                let v = g.param(xp);
                let l = f(&mut g, v);
                g.scalar(l)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.as_slice()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            assert!(
                rel < 1e-6 || (a - numeric).abs() < 1e-9,
                "entry {k}: {a} vs {numeric}"
            );
        }
    }

    fn target(rows: usize, cols: usize, seed: u64) -> Matrix {
        Matrix::randn(rows, cols, 1.0, &mut Rng::new(seed))
    }

    #[test]
    fn softmax_and_layer_norm_backward() {
        let x = target(3, 4, 1);
        let t = target(3, 4, 2);
        check(
            |g, v| {
                let s = g.softmax_rows(v);
                g.mse(s, &t).unwrap()
            },
            x.clone(),
        );
        check(
            |g, v| {
                let s = g.layer_norm_rows(v, 1e-5);
                g.mse(s, &t).unwrap()
            },
            x,
        );
    }

    #[test]
    fn matmul_family_backward() {
        let x = target(3, 4, 3);
        let w = target(4, 2, 4);
        let t = target(3, 2, 5);
        check(
            |g, v| {
                let wv = g.constant(w.clone());
                let y = g.matmul(v, wv).unwrap();
                let y = g.tanh(y);
                g.mse(y, &t).unwrap()
            },
            x.clone(),
        );
        let b = target(2, 4, 6);
        let t2 = target(3, 2, 7);
        check(
            |g, v| {
                let bv = g.constant(b.clone());
                let y = g.matmul_bt(v, bv).unwrap();
                let y = g.sigmoid(y);
                g.mse(y, &t2).unwrap()
            },
            x,
        );
    }

    #[test]
    fn structural_ops_backward() {
        let x = target(4, 3, 8);
        let t = target(2, 5, 9);
        let mask = Mask::from_vec(4, 3, (0..12).map(|i| i % 3 != 1).collect());
        check(
            |g, v| {
                let a = g.slice_cols(v, 0, 2);
                let b = g.slice_rows(v, 1, 3);
                let r0 = g.row(a, 0);
                let r3 = g.row(a, 3);
                let top = g.stack_rows(&[r0, r3]).unwrap();
                let bb = g.slice_cols(b, 0, 3);
                let c = g.concat_cols(&[top, bb]).unwrap();
                let c = g.relu(c);
                let l1 = g.mse(c, &t).unwrap();
                let zero = g.constant(Matrix::zeros(4, 3));
                let s = g.select(&mask, v, zero).unwrap();
                let s = g.mul(s, v).unwrap();
                let gain = g.slice_rows(v, 0, 1);
                let s = g.mul_row(s, gain).unwrap();
                let l2 = g.masked_mse(s, &Matrix::zeros(4, 3), &mask).unwrap();
                g.sum_scalars(&[l1, l2]).unwrap()
            },
            x,
        );
    }

    #[test]
    fn cross_entropy_backward() {
        let x = target(3, 4, 10);
        let mut onehot = Matrix::zeros(3, 4);
        onehot[(0, 1)] = 1.0;
        onehot[(1, 3)] = 1.0;
        onehot[(2, 0)] = 1.0;
        check(
            |g, v| {
                let p = g.softmax_rows(v);
                g.cross_entropy(p, &onehot).unwrap()
            },
            x,
        );
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Matrix::filled(2, 2, 1.0));
        let p = g.param(Matrix::filled(2, 2, 2.0));
        let y = g.mul(c, p).unwrap();
        let loss = g.mse(y, &Matrix::zeros(2, 2)).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert!(grads.get(p).is_some());
    }

    #[test]
    fn empty_mask_is_degenerate() {
        let mut g = Graph::new();
        let p = g.param(Matrix::zeros(2, 2));
        let err = g.masked_mse(p, &Matrix::zeros(2, 2), &Mask::all(2, 2, false));
        assert!(matches!(err, Err(Error::Degenerate(_))));
    }
}
