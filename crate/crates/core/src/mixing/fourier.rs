//! Time-domain filters applied by circular convolution in the frequency domain.

use crate::error::{Error, Result};
use crate::spectral::{circular_convolve_with, circular_correlate_with, FftPlan};
use crate::tensor::Tensor;

/// Fold a length-`l` filter onto a circle of `n` taps: tap `j` lands on
/// `j mod n`. For `l ≤ n` this is plain zero padding; for longer filters it
/// is exactly the circular convolution sum taken over all `l` taps.
pub fn fold_filter(filter: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (j, &v) in filter.iter().enumerate() {
        out[j % n] += v;
    }
    out
}

/// Row-wise circular convolution of `x` (`[C × N]`) with `filters` (`[C × l]`).
pub fn circular_filter(filters: &Tensor, x: &Tensor) -> Result<Tensor> {
    if filters.rows() != x.rows() || x.rank() != 2 {
        return Err(Error::Shape {
            op: "circular_filter",
            left: filters.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    let n = x.cols();
    let plan = FftPlan::new(n)?;
    let mut out = Tensor::zeros(x.shape());
    for c in 0..x.rows() {
        let k = fold_filter(filters.row(c), n);
        out.row_mut(c)
            .copy_from_slice(&circular_convolve_with(&plan, x.row(c), &k));
    }
    Ok(out)
}

/// Gradients of [`circular_filter`]: `(d filters, d x)`.
pub fn circular_filter_backward(
    filters: &Tensor,
    x: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let n = x.cols();
    let l = filters.cols();
    let plan = FftPlan::new(n)?;
    let mut dfilters = Tensor::zeros(filters.shape());
    let mut dx = Tensor::zeros(x.shape());
    for c in 0..x.rows() {
        let k = fold_filter(filters.row(c), n);
        dx.row_mut(c)
            .copy_from_slice(&circular_correlate_with(&plan, dy.row(c), &k));
        let dk = circular_correlate_with(&plan, dy.row(c), x.row(c));
        for j in 0..l {
            dfilters.set(c, j, dk[j % n]);
        }
    }
    Ok((dfilters, dx))
}
