use super::{join, Parameter, Params};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{rand_uniform, Tensor};

/// Affine map over the channel dimension: `y = W·x + b`, bias broadcast
/// across tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    /// Weights uniform in `±scale/√d_in`, zero bias.
    pub fn new(rng: &mut Rng, d_in: usize, d_out: usize, scale: f64) -> Self {
        let bound = scale / (d_in as f64).sqrt();
        let weight = rand_uniform(rng, &[d_out, d_in], -bound, bound).expect("positive bound");
        Self::from_parts(weight, Tensor::zeros(&[d_out])).expect("consistent shapes")
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.rows()] {
            return Err(Error::Shape {
                op: "linear",
                left: weight.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            weight: Parameter::new(weight),
            bias: Parameter::new(bias),
        })
    }

    pub fn d_in(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.value.rows()
    }

    /// The cache is the input itself.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut y = self.weight.value.matmul(x)?;
        let n = y.cols();
        for (r, &b) in self.bias.value.data().iter().enumerate() {
            y.data_mut()[r * n..(r + 1) * n]
                .iter_mut()
                .for_each(|v| *v += b);
        }
        Ok((y, x.clone()))
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let dw = dy.matmul_nt(x)?;
        self.weight.accumulate(&dw)?;
        let db: Vec<f64> = (0..dy.rows()).map(|r| dy.row(r).iter().sum()).collect();
        self.bias.accumulate(&Tensor::vector(db))?;
        self.weight.value.matmul_tn(dy)
    }
}

impl Params for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
