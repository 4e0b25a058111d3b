//! Parameter-free Fourier token mixing: the real part of a 2-D DFT.

use num_complex::Complex64;

use crate::error::Result;
use crate::spectral::FftPlan;
use crate::tensor::Tensor;

/// `Re(F_channels · X · F_tokens)` for `X` of shape `[D × N]`.
pub fn fnet_forward(x: &Tensor) -> Result<Tensor> {
    let (d, n) = (x.rows(), x.cols());
    let token_plan = FftPlan::new(n)?;
    let channel_plan = FftPlan::new(d)?;
    let mut grid: Vec<Complex64> = Vec::with_capacity(d * n);
    for r in 0..d {
        grid.extend(token_plan.forward_real(x.row(r)));
    }
    let mut out = Tensor::zeros(&[d, n]);
    let mut column = vec![Complex64::new(0.0, 0.0); d];
    for c in 0..n {
        for r in 0..d {
            column[r] = grid[r * n + c];
        }
        channel_plan.forward(&mut column);
        for r in 0..d {
            out.set(r, c, column[r].re);
        }
    }
    Ok(out)
}

/// The DFT matrices are symmetric, so the adjoint of the map is the map itself.
pub fn fnet_backward(dy: &Tensor) -> Result<Tensor> {
    fnet_forward(dy)
}
