//! Named parameter traversal shared by training, gradient checks and checkpoints.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::numerics::Matrix;

/// A bundle of trainable matrices with stable names.
///
/// `visit`, `visit_mut` and `visit_vars` must traverse in the same order.
pub trait Parameters {
    type Vars;

    fn bind(&self, g: &mut Graph) -> Self::Vars;
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Matrix));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix));
    fn visit_vars(vars: &Self::Vars, f: &mut dyn FnMut(Var));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Parameters for Matrix {
    type Vars = Var;

    fn bind(&self, g: &mut Graph) -> Var {
        g.param(self.clone())
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Matrix)) {
        f(prefix, self)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f(prefix, self)
    }

    fn visit_vars(vars: &Var, f: &mut dyn FnMut(Var)) {
        f(*vars)
    }
}

impl<T: Parameters> Parameters for Vec<T> {
    type Vars = Vec<T::Vars>;

    fn bind(&self, g: &mut Graph) -> Self::Vars {
        self.iter().map(|p| p.bind(g)).collect()
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Matrix)) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_vars(vars: &Self::Vars, f: &mut dyn FnMut(Var)) {
        for v in vars {
            T::visit_vars(v, f);
        }
    }
}

impl<T: Parameters> Parameters for Option<T> {
    type Vars = Option<T::Vars>;

    fn bind(&self, g: &mut Graph) -> Self::Vars {
        self.as_ref().map(|p| p.bind(g))
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Matrix)) {
        if let Some(p) = self {
            p.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix)) {
        if let Some(p) = self {
            p.visit_mut(prefix, f);
        }
    }

    fn visit_vars(vars: &Self::Vars, f: &mut dyn FnMut(Var)) {
        if let Some(v) = vars {
            T::visit_vars(v, f);
        }
    }
}

/// Implements [`Parameters`] for a struct whose listed fields are all
/// parameter bundles, generating the matching `Vars` struct.
macro_rules! impl_parameters {
    ($ty:ty => $vars:ident { $($field:ident : $fty:ty),* $(,)? }) => {
        #[derive(Debug, Clone)]
        pub struct $vars {
            $(pub $field: <$fty as $crate::params::Parameters>::Vars,)*
        }

        impl $crate::params::Parameters for $ty {
            type Vars = $vars;

            fn bind(&self, g: &mut $crate::graph::Graph) -> $vars {
                $vars { $($field: self.$field.bind(g),)* }
            }

            fn visit<'a>(
                &'a self,
                prefix: &str,
                f: &mut dyn FnMut(&str, &'a $crate::numerics::Matrix),
            ) {
                $(self.$field.visit(&$crate::params::join(prefix, stringify!($field)), f);)*
            }

            fn visit_mut(
                &mut self,
                prefix: &str,
                f: &mut dyn FnMut(&str, &mut $crate::numerics::Matrix),
            ) {
                $(self.$field.visit_mut(&$crate::params::join(prefix, stringify!($field)), f);)*
            }

            fn visit_vars(vars: &$vars, f: &mut dyn FnMut($crate::graph::Var)) {
                $(<$fty as $crate::params::Parameters>::visit_vars(&vars.$field, f);)*
            }
        }
    };
}
pub(crate) use impl_parameters;

pub fn var_list<P: Parameters>(vars: &P::Vars) -> Vec<Var> {
    let mut out = Vec::new();
    P::visit_vars(vars, &mut |v| out.push(v));
    out
}

/// Gradients in traversal order, zeros for parameters the loss never touched.
pub fn flat_gradients<P: Parameters>(vars: &P::Vars, grads: &Gradients) -> Vec<Matrix> {
    var_list::<P>(vars)
        .into_iter()
        .map(|v| grads.wrt(v))
        .collect()
}

/// Plain gradient-descent step `θ ← θ − lr·∇θ`.
pub fn sgd_step<P: Parameters>(params: &mut P, vars: &P::Vars, grads: &Gradients, lr: f64) {
    let list = var_list::<P>(vars);
    let mut idx = 0;
    params.visit_mut("", &mut |_, m| {
        if let Some(g) = grads.get(list[idx]) {
            for (p, d) in m.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *p -= lr * d;
            }
        }
        idx += 1;
    });
}

/// Euclidean norm over the gradients of every parameter.
pub fn gradient_norm<P: Parameters>(vars: &P::Vars, grads: &Gradients) -> f64 {
    var_list::<P>(vars)
        .into_iter()
        .filter_map(|v| grads.get(v))
        .flat_map(|g| g.as_slice())
        .map(|d| d * d)
        .sum::<f64>()
        .sqrt()
}

/// Gradient step in which each tensor's gradient is rescaled to norm
/// `max_norm` when its own norm exceeds it. `max_norm ≤ 0` disables the
/// limit. Returns how many tensors were rescaled.
pub fn clipped_sgd_step<P: Parameters>(
    params: &mut P,
    vars: &P::Vars,
    grads: &Gradients,
    lr: f64,
    max_norm: f64,
) -> usize {
    let list = var_list::<P>(vars);
    let mut idx = 0;
    let mut clipped = 0;
    params.visit_mut("", &mut |_, m| {
        if let Some(g) = grads.get(list[idx]) {
            let norm = g.as_slice().iter().map(|d| d * d).sum::<f64>().sqrt();
            let step = if max_norm > 0.0 && norm > max_norm {
                clipped += 1;
                lr * max_norm / norm
            } else {
                lr
            };
            for (p, d) in m.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *p -= step * d;
            }
        }
        idx += 1;
    });
    clipped
}

pub fn named_tensors<P: Parameters>(params: &P, prefix: &str) -> BTreeMap<String, Matrix> {
    let mut out = BTreeMap::new();
    params.visit(prefix, &mut |name, m| {
        out.insert(name.to_string(), m.clone());
    });
    out
}

/// Overwrites every parameter from `tensors`, checking names and shapes.
pub fn load_named<P: Parameters>(
    params: &mut P,
    prefix: &str,
    tensors: &BTreeMap<String, Matrix>,
) -> Result<()> {
    let mut failure = None;
    params.visit_mut(prefix, &mut |name, m| {
        if failure.is_some() {
            return;
        }
        match tensors.get(name) {
            Some(t) if t.shape() == m.shape() => *m = t.clone(),
            Some(t) => {
                failure = Some(Error::Data(format!(
                    "tensor {name} has shape {}, model expects {}",
                    t.shape(),
                    m.shape()
                )))
            }
            None => {
                failure = Some(Error::Data(format!(
                    "tensor {name} missing from checkpoint"
                )))
            }
        }
    });
    failure.map_or(Ok(()), Err)
}

pub fn parameter_count<P: Parameters>(params: &P) -> usize {
    let mut n = 0;
    params.visit("", &mut |_, m| n += m.len());
    n
}

pub fn all_finite<P: Parameters>(params: &P) -> bool {
    let mut ok = true;
    params.visit("", &mut |_, m| ok &= m.is_finite());
    ok
}
