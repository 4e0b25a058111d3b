//! Differentiable layers with explicit forward/backward passes.
//!
//! Every layer's `forward` takes `&self` and returns its output together with
//! a cache holding whatever the backward pass needs. `backward` consumes that
//! cache and the upstream gradient, accumulates parameter gradients and
//! returns the gradient with respect to the layer input.

mod activation;
mod conv;
mod dropout;
pub mod gradcheck;
mod linear;
mod norm;

pub use activation::{gelu, gelu_backward, log_softmax_columns, normal_cdf, softmax_rows};
pub use conv::{depthwise_conv1d, DepthwiseConv1d, StridedConv1d};
pub use dropout::Dropout;
pub use gradcheck::finite_diff_check;
pub use linear::Linear;
pub use norm::{LayerNorm, LayerNormCache, LAYER_NORM_EPS};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A learnable tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub(crate) fn accumulate(&mut self, g: &Tensor) -> Result<()> {
        self.grad.add_assign(g)
    }
}

/// Named traversal over the learnable parameters of a module.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Params for Parameter {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        f(prefix, self)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        f(prefix, self)
    }
}

pub fn param_count(m: &dyn Params) -> usize {
    let mut n = 0;
    m.visit("", &mut |_, p| n += p.len());
    n
}

pub fn named_shapes(m: &dyn Params) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, p| {
        out.push((name.to_string(), p.value.shape().to_vec()))
    });
    out
}

pub fn zero_grads(m: &mut dyn Params) {
    m.visit_mut("", &mut |_, p| p.zero_grad());
}

pub fn flatten_values(m: &dyn Params) -> Vec<f64> {
    let mut out = Vec::new();
    m.visit("", &mut |_, p| out.extend_from_slice(p.value.data()));
    out
}

pub fn flatten_grads(m: &dyn Params) -> Vec<f64> {
    let mut out = Vec::new();
    m.visit("", &mut |_, p| out.extend_from_slice(p.grad.data()));
    out
}

/// Overwrite all parameter values from a flat vector in visit order.
pub fn load_values(m: &mut dyn Params, flat: &[f64]) -> Result<()> {
    let total = param_count(m);
    if total != flat.len() {
        return Err(Error::invalid(format!(
            "load_values: model has {total} parameters, got {}",
            flat.len()
        )));
    }
    let mut offset = 0;
    m.visit_mut("", &mut |_, p| {
        let n = p.len();
        p.value
            .data_mut()
            .copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    });
    Ok(())
}

pub fn grad_norm(m: &dyn Params) -> f64 {
    let mut s = 0.0;
    m.visit("", &mut |_, p| s += p.grad.sum_sq());
    s.sqrt()
}
