use super::{join, Parameter, Params};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{rand_uniform, Tensor};

fn check_depthwise(kernel: &Tensor, x: &Tensor) -> Result<()> {
    if kernel.rank() != 2 || x.rank() != 2 || kernel.rows() != x.rows() {
        return Err(Error::Shape {
            op: "depthwise_conv1d",
            left: kernel.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    if kernel.cols() % 2 == 0 {
        return Err(Error::invalid(format!(
            "depthwise_conv1d: kernel size {} must be odd",
            kernel.cols()
        )));
    }
    Ok(())
}

/// Per-channel convolution with centered "same" zero padding:
/// `z[c, i] = Σⱼ K[c, j]·x[c, i + j − (k−1)/2]`.
pub fn depthwise_conv1d(kernel: &Tensor, x: &Tensor) -> Result<Tensor> {
    check_depthwise(kernel, x)?;
    let (d, n, k) = (x.rows(), x.cols() as isize, kernel.cols());
    let half = (k / 2) as isize;
    let mut out = Tensor::zeros(x.shape());
    for c in 0..d {
        let kr = kernel.row(c);
        let xr = x.row(c);
        let or = out.row_mut(c);
        for i in 0..n {
            let mut acc = 0.0;
            for (j, &w) in kr.iter().enumerate() {
                let t = i + j as isize - half;
                if (0..n).contains(&t) {
                    acc += w * xr[t as usize];
                }
            }
            or[i as usize] = acc;
        }
    }
    Ok(out)
}

/// Gradients of [`depthwise_conv1d`]: `(d kernel, d x)`.
pub fn depthwise_conv1d_backward(kernel: &Tensor, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let (d, n, k) = (x.rows(), x.cols() as isize, kernel.cols());
    let half = (k / 2) as isize;
    let mut dk = Tensor::zeros(kernel.shape());
    let mut dx = Tensor::zeros(x.shape());
    for c in 0..d {
        let kr = kernel.row(c);
        let xr = x.row(c);
        let gr = dy.row(c);
        for j in 0..k {
            let mut acc = 0.0;
            for i in 0..n {
                let t = i + j as isize - half;
                if (0..n).contains(&t) {
                    acc += gr[i as usize] * xr[t as usize];
                    dx.data_mut()[c * n as usize + t as usize] += gr[i as usize] * kr[j];
                }
            }
            dk.set(c, j, acc);
        }
    }
    (dk, dx)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseConv1d {
    pub kernel: Parameter,
}

impl DepthwiseConv1d {
    pub fn new(kernel: Tensor) -> Result<Self> {
        if kernel.rank() != 2 || kernel.cols() % 2 == 0 {
            return Err(Error::invalid(format!(
                "depthwise kernel must be [channels × odd size], got {:?}",
                kernel.shape()
            )));
        }
        Ok(Self {
            kernel: Parameter::new(kernel),
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.value.cols()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((depthwise_conv1d(&self.kernel.value, x)?, x.clone()))
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let (dk, dx) = depthwise_conv1d_backward(&self.kernel.value, x, dy);
        self.kernel.accumulate(&dk)?;
        Ok(dx)
    }
}

impl Params for DepthwiseConv1d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        f(&join(prefix, "kernel"), &self.kernel);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
    }
}

/// Full (channel-mixing) 1-D convolution, kernel 3, stride 2, padding 1.
/// Maps `[d_in × N]` to `[d_out × ⌈N/2⌉]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StridedConv1d {
    /// `[d_out × d_in × 3]`
    pub weight: Parameter,
    pub bias: Parameter,
}

const SUB_KERNEL: usize = 3;
const SUB_STRIDE: usize = 2;

impl StridedConv1d {
    pub fn new(rng: &mut Rng, d_in: usize, d_out: usize) -> Self {
        let bound = 1.0 / ((d_in * SUB_KERNEL) as f64).sqrt();
        let w = rand_uniform(rng, &[d_out, d_in, SUB_KERNEL], -bound, bound).expect("bound > 0");
        Self {
            weight: Parameter::new(w),
            bias: Parameter::new(Tensor::zeros(&[d_out])),
        }
    }

    pub fn output_len(n: usize) -> usize {
        n.div_ceil(SUB_STRIDE)
    }

    fn d_in(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn d_out(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn weight_matrix(&self) -> Tensor {
        Tensor::matrix(
            self.d_out(),
            self.d_in() * SUB_KERNEL,
            self.weight.value.data().to_vec(),
        )
        .expect("consistent weight")
    }

    /// Unfold input windows into `[(d_in·3) × N_out]`.
    fn unfold(&self, x: &Tensor) -> Tensor {
        let (d_in, n) = (x.rows(), x.cols() as isize);
        let n_out = Self::output_len(x.cols());
        let mut cols = Tensor::zeros(&[d_in * SUB_KERNEL, n_out]);
        for i in 0..d_in {
            for j in 0..SUB_KERNEL {
                for t in 0..n_out {
                    let src = (SUB_STRIDE * t + j) as isize - 1;
                    if (0..n).contains(&src) {
                        cols.set(i * SUB_KERNEL + j, t, x.at(i, src as usize));
                    }
                }
            }
        }
        cols
    }

    /// The cache is the unfolded input plus the input length.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, (Tensor, usize))> {
        if x.rank() != 2 || x.rows() != self.d_in() {
            return Err(Error::Shape {
                op: "strided_conv1d",
                left: self.weight.value.shape().to_vec(),
                right: x.shape().to_vec(),
            });
        }
        let cols = self.unfold(x);
        let mut y = self.weight_matrix().matmul(&cols)?;
        let n_out = y.cols();
        for (r, &b) in self.bias.value.data().iter().enumerate() {
            y.data_mut()[r * n_out..(r + 1) * n_out]
                .iter_mut()
                .for_each(|v| *v += b);
        }
        Ok((y, (cols, x.cols())))
    }

    pub fn backward(&mut self, cache: &(Tensor, usize), dy: &Tensor) -> Result<Tensor> {
        let (cols, n) = cache;
        let dw = dy.matmul_nt(cols)?;
        let dw = Tensor::new(self.weight.value.shape().to_vec(), dw.into_data())?;
        self.weight.accumulate(&dw)?;
        let db: Vec<f64> = (0..dy.rows()).map(|r| dy.row(r).iter().sum()).collect();
        self.bias.accumulate(&Tensor::vector(db))?;

        let dcols = self.weight_matrix().matmul_tn(dy)?;
        let d_in = self.d_in();
        let mut dx = Tensor::zeros(&[d_in, *n]);
        for i in 0..d_in {
            for j in 0..SUB_KERNEL {
                for t in 0..dy.cols() {
                    let src = (SUB_STRIDE * t + j) as isize - 1;
                    if (0..*n as isize).contains(&src) {
                        let cur = dx.at(i, src as usize);
                        dx.set(i, src as usize, cur + dcols.at(i * SUB_KERNEL + j, t));
                    }
                }
            }
        }
        Ok(dx)
    }
}

impl Params for StridedConv1d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_module;
    use crate::tensor::rand_normal;

    fn row(v: &[f64]) -> Tensor {
        Tensor::from_rows(&[v])
    }

    #[test]
    fn delta_kernels() {
        let x = row(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(depthwise_conv1d(&row(&[1.0]), &x).unwrap(), x);
        assert_eq!(depthwise_conv1d(&row(&[0.0, 1.0, 0.0]), &x).unwrap(), x);
        assert_eq!(
            depthwise_conv1d(&row(&[1.0, 0.0, 0.0]), &x).unwrap().data(),
            &[0.0, 1.0, 2.0, 3.0]
        );
        assert!(depthwise_conv1d(&row(&[1.0, 0.0]), &x).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(15);
        let conv = DepthwiseConv1d::new(rand_normal(&mut rng, &[4, 15], 1.0)).unwrap();
        let x = rand_normal(&mut rng, &[4, 20], 1.0);
        let probe = rand_normal(&mut rng, &[4, 20], 1.0);
        let err = check_module(
            &conv,
            &[x],
            &probe,
            1e-5,
            |m, xs| Ok(m.forward(&xs[0])?.0),
            |m, xs, dy| Ok(vec![m.backward(&xs[0], dy)?]),
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn interior_unaffected_by_trailing_zeros() {
        let mut rng = Rng::new(4);
        let k = rand_normal(&mut rng, &[3, 5], 1.0);
        let x = rand_normal(&mut rng, &[3, 12], 1.0);
        let long = x.pad_tokens(17, 0.0).unwrap();
        let a = depthwise_conv1d(&k, &x).unwrap();
        let b = depthwise_conv1d(&k, &long).unwrap();
        for c in 0..3 {
            for i in 2..10 {
                assert_eq!(a.at(c, i), b.at(c, i));
            }
        }
    }

    #[test]
    fn strided_conv_lengths_and_gradients() {
        let mut rng = Rng::new(8);
        let conv = StridedConv1d::new(&mut rng, 3, 4);
        for n in [1, 2, 7, 8] {
            let y = conv.forward(&Tensor::zeros(&[3, n])).unwrap().0;
            assert_eq!(y.cols(), n.div_ceil(2));
        }
        let x = rand_normal(&mut rng, &[3, 7], 1.0);
        let probe = rand_normal(&mut rng, &[4, 4], 1.0);
        let err = check_module(
            &conv,
            &[x],
            &probe,
            1e-5,
            |m, xs| Ok(m.forward(&xs[0])?.0),
            |m, xs, dy| {
                let (_, c) = m.forward(&xs[0])?;
                Ok(vec![m.backward(&c, dy)?])
            },
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
