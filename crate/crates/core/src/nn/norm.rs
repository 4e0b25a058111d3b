use super::{join, Parameter, Params};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalizes each token (column) over its channels, then applies a
/// per-channel affine transform.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Parameter::new(Tensor::filled(&[d], 1.0)),
            beta: Parameter::new(Tensor::zeros(&[d])),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        let (d, n) = (x.rows(), x.cols());
        if x.rank() != 2 || d != self.dim() {
            return Err(Error::Shape {
                op: "layernorm",
                left: vec![self.dim()],
                right: x.shape().to_vec(),
            });
        }
        let mut normalized = Tensor::zeros(&[d, n]);
        let mut inv_std = vec![0.0; n];
        for c in 0..n {
            let mean = (0..d).map(|r| x.at(r, c)).sum::<f64>() / d as f64;
            let var = (0..d).map(|r| (x.at(r, c) - mean).powi(2)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[c] = s;
            for r in 0..d {
                normalized.set(r, c, (x.at(r, c) - mean) * s);
            }
        }
        let mut y = normalized.clone();
        for r in 0..d {
            let (g, b) = (self.gamma.value.data()[r], self.beta.value.data()[r]);
            y.row_mut(r).iter_mut().for_each(|v| *v = *v * g + b);
        }
        Ok((
            y,
            LayerNormCache {
                normalized,
                inv_std,
            },
        ))
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Tensor) -> Result<Tensor> {
        let xh = &cache.normalized;
        let (d, n) = (xh.rows(), xh.cols());
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        for r in 0..d {
            for c in 0..n {
                dgamma[r] += dy.at(r, c) * xh.at(r, c);
                dbeta[r] += dy.at(r, c);
            }
        }
        self.gamma.accumulate(&Tensor::vector(dgamma))?;
        self.beta.accumulate(&Tensor::vector(dbeta))?;

        let gamma = self.gamma.value.data();
        let mut dx = Tensor::zeros(&[d, n]);
        for c in 0..n {
            let dxh: Vec<f64> = (0..d).map(|r| dy.at(r, c) * gamma[r]).collect();
            let mean_dxh = dxh.iter().sum::<f64>() / d as f64;
            let mean_dxh_xh = (0..d).map(|r| dxh[r] * xh.at(r, c)).sum::<f64>() / d as f64;
            for r in 0..d {
                dx.set(
                    r,
                    c,
                    cache.inv_std[c] * (dxh[r] - mean_dxh - xh.at(r, c) * mean_dxh_xh),
                );
            }
        }
        Ok(dx)
    }
}

impl Params for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}
