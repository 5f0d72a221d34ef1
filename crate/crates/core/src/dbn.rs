//! Stacks of RBMs: greedy layer-wise pretraining and the up/down passes.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::numerics::{bernoulli_sample, Matrix, Rng};
use crate::params::impl_parameters;
use crate::rbm::{self, RbmParams, VisibleKind};

#[derive(Debug, Clone, PartialEq)]
pub struct DbnStack {
    pub layers: Vec<RbmParams>,
}

impl_parameters!(DbnStack => DbnVars { layers: Vec<RbmParams> });

/// Reconstruction error of one layer before and after pretraining, plus the
/// per-epoch CD errors in between.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub initial: f64,
    pub per_epoch: Vec<f64>,
    pub last: f64,
}

impl DbnStack {
    /// Randomly initialised stack `sizes[0] → sizes[1] → …`. The first layer
    /// uses `kind` for its visibles; deeper layers are Bernoulli.
    pub fn new(sizes: &[usize], kind: VisibleKind, rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!(
                "a stack needs at least two nonzero layer sizes, got {sizes:?}"
            )));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let k = if i == 0 {
                    kind
                } else {
                    VisibleKind::BernoulliProb
                };
                RbmParams::new(w[0], w[1], k, rng)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<RbmParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a stack needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].n_hidden() != pair[1].n_visible() {
                return Err(Error::shape(
                    "dbn layer chain",
                    pair[0].weights.shape(),
                    pair[1].weights.shape(),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(RbmParams::n_hidden));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_visible()
    }

    pub fn top_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].n_hidden()
    }
}

/// Greedy pretraining with one full-batch CD-k update per epoch per layer.
pub fn pretrain_greedy(
    stack: &DbnStack,
    batch: &Matrix,
    epochs: usize,
    lr: f64,
    k: usize,
    rng: &mut Rng,
) -> Result<(DbnStack, Vec<LayerTrace>)> {
    pretrain_greedy_batched(stack, batch, epochs, lr, k, batch.rows(), rng)
}

/// Greedy pretraining over consecutive mini-batches of `batch_rows` rows.
///
/// Layer 0 trains on `data`; layer `i > 0` trains on the `prop_up`
/// probabilities of the already-trained layers below it.
pub fn pretrain_greedy_batched(
    stack: &DbnStack,
    data: &Matrix,
    epochs: usize,
    lr: f64,
    k: usize,
    batch_rows: usize,
    rng: &mut Rng,
) -> Result<(DbnStack, Vec<LayerTrace>)> {
    if epochs == 0 {
        return Err(Error::Config("pretraining needs at least one epoch".into()));
    }
    if batch_rows == 0 {
        return Err(Error::Config(
            "pretraining batch must hold at least one row".into(),
        ));
    }
    if data.cols() != stack.input_dim() {
        return Err(Error::shape(
            "pretrain_greedy",
            data.shape(),
            stack.layers[0].weights.shape(),
        ));
    }

    let mut trained = stack.clone();
    let mut traces = Vec::with_capacity(stack.layers.len());
    let mut input = data.clone();
    for layer in trained.layers.iter_mut() {
        let initial = rbm::reconstruction_error(layer, &input)?;
        let mut per_epoch = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let mut total = 0.0;
            let mut chunks = 0;
            let mut start = 0;
            while start < input.rows() {
                let end = (start + batch_rows).min(input.rows());
                let chunk = input.slice_rows(start, end);
                let (next, err) = rbm::cd_k_update(layer, &chunk, k, lr, rng)?;
                *layer = next;
                total += err;
                chunks += 1;
                start = end;
            }
            per_epoch.push(total / chunks.max(1) as f64);
        }
        let last = rbm::reconstruction_error(layer, &input)?;
        traces.push(LayerTrace {
            initial,
            per_epoch,
            last,
        });
        input = rbm::prop_up(layer, &input)?;
    }
    Ok((trained, traces))
}

/// Composed `prop_up` probabilities through every layer.
pub fn transform_up(stack: &DbnStack, v: &Matrix) -> Result<Matrix> {
    let mut h = v.clone();
    for layer in &stack.layers {
        h = rbm::prop_up(layer, &h)?;
    }
    Ok(h)
}

/// Composed `prop_down` from the top layer to the visibles.
///
/// In stochastic mode binary states are sampled at each hand-off between
/// layers, top to bottom, one [`bernoulli_sample`] matrix per hand-off; the
/// bottom layer always returns probabilities (or means).
pub fn generate_down(
    stack: &DbnStack,
    h_top: &Matrix,
    rng: &mut Rng,
    stochastic: bool,
) -> Result<Matrix> {
    let mut h = h_top.clone();
    for (idx, layer) in stack.layers.iter().enumerate().rev() {
        let v = rbm::prop_down(layer, &h)?;
        h = if stochastic && idx > 0 {
            bernoulli_sample(&v, rng)?
        } else {
            v
        };
    }
    Ok(h)
}

pub fn transform_up_graph(vars: &DbnVars, g: &mut Graph, v: Var) -> Result<Var> {
    let mut h = v;
    for layer in &vars.layers {
        h = rbm::prop_up_graph(layer, g, h)?;
    }
    Ok(h)
}

/// Mean-field `generate_down` on a graph.
pub fn generate_down_graph(
    stack: &DbnStack,
    vars: &DbnVars,
    g: &mut Graph,
    h_top: Var,
) -> Result<Var> {
    let mut h = h_top;
    for (layer, lv) in stack.layers.iter().zip(&vars.layers).rev() {
        h = rbm::prop_down_graph(lv, layer.visible_kind, g, h)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_stack(sizes: &[usize]) -> DbnStack {
        DbnStack::from_layers(
            sizes
                .windows(2)
                .map(|w| RbmParams::zeros(w[0], w[1], VisibleKind::BernoulliProb))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_broken_chains() {
        let a = RbmParams::zeros(4, 3, VisibleKind::BernoulliProb);
        let b = RbmParams::zeros(2, 2, VisibleKind::BernoulliProb);
        assert!(DbnStack::from_layers(vec![a, b]).is_err());
        assert!(DbnStack::from_layers(vec![]).is_err());
    }

    #[test]
    fn pretrain_zero_lr_leaves_stack_unchanged() {
        let mut rng = Rng::new(1);
        let stack = DbnStack::new(&[6, 4, 3], VisibleKind::BernoulliProb, &mut rng).unwrap();
        let data = Matrix::from_fn(10, 6, |i, j| ((i * j) % 3 == 0) as u8 as f64);
        let (trained, traces) = pretrain_greedy(&stack, &data, 3, 0.0, 1, &mut rng).unwrap();
        assert_eq!(trained, stack);
        assert_eq!(traces.len(), 2);
    }

    #[test]
    fn single_layer_matches_plain_cd_loop() {
        let mut init = Rng::new(3);
        let stack = DbnStack::new(&[5, 3], VisibleKind::BernoulliProb, &mut init).unwrap();
        let data = Matrix::from_fn(7, 5, |i, j| ((i + 2 * j) % 3 == 1) as u8 as f64);
        let (trained, _) = pretrain_greedy(&stack, &data, 20, 0.1, 1, &mut Rng::new(9)).unwrap();

        let mut rng = Rng::new(9);
        let mut layer = stack.layers[0].clone();
        for _ in 0..20 {
            layer = rbm::cd_k_update(&layer, &data, 1, 0.1, &mut rng).unwrap().0;
        }
        assert_eq!(trained.layers[0], layer);
    }

    #[test]
    fn epochs_zero_is_config_error() {
        let stack = zero_stack(&[3, 2]);
        let err = pretrain_greedy(&stack, &Matrix::zeros(2, 3), 0, 0.1, 1, &mut Rng::new(0));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn transform_up_examples() {
        let mut rng = Rng::new(4);
        let one = DbnStack::new(&[4, 3], VisibleKind::BernoulliProb, &mut rng).unwrap();
        let v = Matrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.3);
        assert_eq!(
            transform_up(&one, &v).unwrap(),
            rbm::prop_up(&one.layers[0], &v).unwrap()
        );

        let zero = zero_stack(&[4, 3, 2]);
        assert_eq!(transform_up(&zero, &v).unwrap(), Matrix::filled(3, 2, 0.5));

        let deep = DbnStack::new(&[4, 6, 5, 2], VisibleKind::BernoulliProb, &mut rng).unwrap();
        let out = transform_up(&deep, &v.scale(40.0)).unwrap();
        assert!(out.as_slice().iter().all(|p| *p > 0.0 && *p < 1.0));
    }

    #[test]
    fn generate_down_examples() {
        let mut rng = Rng::new(5);
        let one = DbnStack::new(&[4, 3], VisibleKind::BernoulliProb, &mut rng).unwrap();
        let h = Matrix::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.2, 0.4, 0.6]]);
        assert_eq!(
            generate_down(&one, &h, &mut rng, false).unwrap(),
            rbm::prop_down(&one.layers[0], &h).unwrap()
        );

        let zero = zero_stack(&[4, 3, 3]);
        assert_eq!(
            generate_down(&zero, &h, &mut rng, false).unwrap(),
            Matrix::filled(2, 4, 0.5)
        );

        let deep = DbnStack::new(&[4, 5, 3], VisibleKind::BernoulliProb, &mut rng).unwrap();
        let a = generate_down(&deep, &h, &mut Rng::new(21), true).unwrap();
        let b = generate_down(&deep, &h, &mut Rng::new(21), true).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            generate_down(&deep, &Matrix::zeros(1, 5), &mut rng, false),
            Err(Error::Shape { .. })
        ));
    }
}
