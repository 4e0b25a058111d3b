//! Gate-path transforms: the part of a gating unit that mixes tokens of the
//! gate half `X_g` before it multiplies the residual half `X_r`.

use super::fourier::{circular_filter, circular_filter_backward};
use crate::error::{Error, Result};
use crate::nn::{depthwise_conv1d, join, DepthwiseConv1d, Linear, Parameter, Params};
use crate::rng::Rng;
use crate::tensor::{rand_uniform, Tensor};

/// Kernel and filter initialization: uniform in `±scale/√k`.
pub const KERNEL_INIT_SCALE: f64 = 0.01;

/// Initial value of gate-path biases, so a freshly built gate passes `X_r`.
pub const GATE_BIAS_INIT: f64 = 1.0;

fn small_uniform(rng: &mut Rng, shape: &[usize], fan: usize) -> Tensor {
    let bound = KERNEL_INIT_SCALE / (fan as f64).sqrt();
    rand_uniform(rng, shape, -bound, bound).expect("positive bound")
}

fn add_row_bias(x: &mut Tensor, bias: &[f64]) {
    for (r, &b) in bias.iter().enumerate() {
        x.row_mut(r).iter_mut().for_each(|v| *v += b);
    }
}

fn row_sums(dy: &Tensor) -> Tensor {
    Tensor::vector((0..dy.rows()).map(|r| dy.row(r).iter().sum()).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gate {
    /// Linear projection across a fixed number of tokens, `(W·X_gᵀ)ᵀ + b`.
    Spatial { proj: Parameter, bias: Parameter },
    /// Per-channel circular convolution with a length-`l` filter.
    Fourier { filter: Parameter, bias: Parameter },
    /// Per-channel depthwise convolution.
    Conv {
        conv: DepthwiseConv1d,
        bias: Parameter,
    },
    /// Depthwise convolution followed by a channel projection.
    ConvProj {
        conv: DepthwiseConv1d,
        bias: Parameter,
        proj: Linear,
    },
    /// Fixed ±`shift` token shifts; no parameters.
    Shift { shift: usize },
}

#[derive(Clone, Debug)]
pub struct GateCache {
    input: Tensor,
    /// Depthwise output including bias, kept for the channel projection.
    conv_out: Option<Tensor>,
}

impl Gate {
    pub fn spatial(rng: &mut Rng, n_max: usize) -> Self {
        Gate::Spatial {
            proj: Parameter::new(small_uniform(rng, &[n_max, n_max], n_max)),
            bias: Parameter::new(Tensor::filled(&[n_max], GATE_BIAS_INIT)),
        }
    }

    pub fn fourier(rng: &mut Rng, channels: usize, filter_len: usize) -> Self {
        Gate::Fourier {
            filter: Parameter::new(small_uniform(rng, &[channels, filter_len], filter_len)),
            bias: Parameter::new(Tensor::filled(&[channels], GATE_BIAS_INIT)),
        }
    }

    pub fn conv(rng: &mut Rng, channels: usize, kernel_size: usize) -> Result<Self> {
        Ok(Gate::Conv {
            conv: DepthwiseConv1d::new(small_uniform(rng, &[channels, kernel_size], kernel_size))?,
            bias: Parameter::new(Tensor::filled(&[channels], GATE_BIAS_INIT)),
        })
    }

    pub fn conv_proj(rng: &mut Rng, channels: usize, kernel_size: usize) -> Result<Self> {
        let conv = DepthwiseConv1d::new(small_uniform(rng, &[channels, kernel_size], kernel_size))?;
        let mut proj = Linear::new(rng, channels, channels, KERNEL_INIT_SCALE);
        proj.bias.value.fill(GATE_BIAS_INIT);
        Ok(Gate::ConvProj {
            conv,
            bias: Parameter::new(Tensor::zeros(&[channels])),
            proj,
        })
    }

    pub fn forward(&self, xg: &Tensor) -> Result<(Tensor, GateCache)> {
        let mut conv_out = None;
        let h = match self {
            Gate::Spatial { proj, bias } => {
                let n_max = proj.value.rows();
                if xg.cols() != n_max {
                    return Err(Error::FixedLength {
                        expected: n_max,
                        got: xg.cols(),
                    });
                }
                // (W·X_gᵀ)ᵀ = X_g·Wᵀ, bias indexed by token
                let mut h = xg.matmul_nt(&proj.value)?;
                for r in 0..h.rows() {
                    for (v, &b) in h.row_mut(r).iter_mut().zip(bias.value.data()) {
                        *v += b;
                    }
                }
                h
            }
            Gate::Fourier { filter, bias } => {
                let mut h = circular_filter(&filter.value, xg)?;
                add_row_bias(&mut h, bias.value.data());
                h
            }
            Gate::Conv { conv, bias } => {
                let mut h = conv.forward(xg)?.0;
                add_row_bias(&mut h, bias.value.data());
                h
            }
            Gate::ConvProj { conv, bias, proj } => {
                let mut c = conv.forward(xg)?.0;
                add_row_bias(&mut c, bias.value.data());
                let h = proj.forward(&c)?.0;
                conv_out = Some(c);
                h
            }
            Gate::Shift { shift } => shift_gate(xg, *shift),
        };
        Ok((
            h,
            GateCache {
                input: xg.clone(),
                conv_out,
            },
        ))
    }

    pub fn backward(&mut self, cache: &GateCache, dh: &Tensor) -> Result<Tensor> {
        let x = &cache.input;
        match self {
            Gate::Spatial { proj, bias } => {
                // H = X·Wᵀ: dW = dHᵀ·X, dX = dH·W
                proj.accumulate(&dh.matmul_tn(x)?)?;
                let db: Vec<f64> = (0..dh.cols())
                    .map(|c| (0..dh.rows()).map(|r| dh.at(r, c)).sum())
                    .collect();
                bias.accumulate(&Tensor::vector(db))?;
                dh.matmul(&proj.value)
            }
            Gate::Fourier { filter, bias } => {
                let (df, dx) = circular_filter_backward(&filter.value, x, dh)?;
                filter.accumulate(&df)?;
                bias.accumulate(&row_sums(dh))?;
                Ok(dx)
            }
            Gate::Conv { conv, bias } => {
                bias.accumulate(&row_sums(dh))?;
                conv.backward(x, dh)
            }
            Gate::ConvProj { conv, bias, proj } => {
                let c = cache
                    .conv_out
                    .as_ref()
                    .ok_or_else(|| Error::invalid("gate cache lacks convolution output"))?;
                let dc = proj.backward(c, dh)?;
                bias.accumulate(&row_sums(&dc))?;
                conv.backward(x, &dc)
            }
            Gate::Shift { shift } => Ok(shift_gate_backward(dh, *shift)),
        }
    }
}

/// First half of the channels reads `s` tokens ahead, second half `s` tokens
/// behind, with zero fill.
pub fn shift_gate(xg: &Tensor, shift: usize) -> Tensor {
    let half = xg.rows() / 2;
    let s = shift as isize;
    let mut out = Tensor::zeros(xg.shape());
    for r in 0..xg.rows() {
        let row = Tensor::vector(xg.row(r).to_vec());
        let moved = if r < half {
            row.shift_tokens(-s)
        } else {
            row.shift_tokens(s)
        };
        out.row_mut(r).copy_from_slice(moved.data());
    }
    out
}

fn shift_gate_backward(dh: &Tensor, shift: usize) -> Tensor {
    let half = dh.rows() / 2;
    let s = shift as isize;
    let mut out = Tensor::zeros(dh.shape());
    for r in 0..dh.rows() {
        let row = Tensor::vector(dh.row(r).to_vec());
        let moved = if r < half {
            row.shift_tokens(s)
        } else {
            row.shift_tokens(-s)
        };
        out.row_mut(r).copy_from_slice(moved.data());
    }
    out
}

/// The fixed depthwise kernel equivalent to [`shift_gate`]: one-hot at the
/// last tap for the first half of the channels, at the first tap for the rest.
pub fn shift_kernel(channels: usize, shift: usize) -> Tensor {
    let k = 2 * shift + 1;
    let mut kernel = Tensor::zeros(&[channels, k]);
    for r in 0..channels {
        let tap = if r < channels / 2 { k - 1 } else { 0 };
        kernel.set(r, tap, 1.0);
    }
    kernel
}

/// Reference evaluation of [`shift_gate`] through the depthwise convolution.
pub fn shift_gate_via_conv(xg: &Tensor, shift: usize) -> Result<Tensor> {
    depthwise_conv1d(&shift_kernel(xg.rows(), shift), xg)
}

impl Params for Gate {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        match self {
            Gate::Spatial { proj, bias } => {
                f(&join(prefix, "proj"), proj);
                f(&join(prefix, "bias"), bias);
            }
            Gate::Fourier { filter, bias } => {
                f(&join(prefix, "filter"), filter);
                f(&join(prefix, "bias"), bias);
            }
            Gate::Conv { conv, bias } => {
                conv.visit(prefix, f);
                f(&join(prefix, "bias"), bias);
            }
            Gate::ConvProj { conv, bias, proj } => {
                conv.visit(prefix, f);
                f(&join(prefix, "bias"), bias);
                proj.visit(&join(prefix, "proj"), f);
            }
            Gate::Shift { .. } => {}
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        match self {
            Gate::Spatial { proj, bias } => {
                f(&join(prefix, "proj"), proj);
                f(&join(prefix, "bias"), bias);
            }
            Gate::Fourier { filter, bias } => {
                f(&join(prefix, "filter"), filter);
                f(&join(prefix, "bias"), bias);
            }
            Gate::Conv { conv, bias } => {
                conv.visit_mut(prefix, f);
                f(&join(prefix, "bias"), bias);
            }
            Gate::ConvProj { conv, bias, proj } => {
                conv.visit_mut(prefix, f);
                f(&join(prefix, "bias"), bias);
                proj.visit_mut(&join(prefix, "proj"), f);
            }
            Gate::Shift { .. } => {}
        }
    }
}
