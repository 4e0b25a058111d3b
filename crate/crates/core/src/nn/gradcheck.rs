//! Central finite-difference gradient checking.

use super::{flatten_grads, flatten_values, load_values, zero_grads, Params};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compare `analytic` against central differences of `loss` around `point`.
///
/// Returns the maximum over coordinates of `|a − n| / max(floor, |a| + |n|)`
/// with `floor = 1e-4·max(1, |loss(point)|)`. Central differences carry a
/// round-off of roughly `ε·|loss|/h`, about `1e-11·|loss|` at `h = 1e-5`, so
/// gradients that are exactly zero still register as agreeing while any
/// gradient above the floor is compared relatively.
pub fn finite_diff_check(
    loss: &mut dyn FnMut(&[f64]) -> Result<f64>,
    point: &[f64],
    analytic: &[f64],
    h: f64,
) -> Result<f64> {
    if point.len() != analytic.len() {
        return Err(Error::invalid(format!(
            "finite_diff_check: {} coordinates but {} analytic gradients",
            point.len(),
            analytic.len()
        )));
    }
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("analytic gradient"));
    }
    let centre = loss(point)?;
    if !centre.is_finite() {
        return Err(Error::NonFinite("finite difference loss"));
    }
    let floor = 1e-4 * centre.abs().max(1.0);
    let mut probe = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let up = loss(&probe)?;
        probe[i] = point[i] - h;
        let down = loss(&probe)?;
        probe[i] = point[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("finite difference loss"));
        }
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(floor);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Gradient check for a module under the scalar loss `⟨probe, forward(inputs)⟩`.
///
/// `backward` must zero nothing itself; it runs its own forward, feeds `dy`
/// back and returns one gradient per input. Both parameter and input
/// gradients are checked.
pub fn check_module<M, F, B>(
    module: &M,
    inputs: &[Tensor],
    probe: &Tensor,
    h: f64,
    forward: F,
    backward: B,
) -> Result<f64>
where
    M: Params + Clone,
    F: Fn(&M, &[Tensor]) -> Result<Tensor>,
    B: Fn(&mut M, &[Tensor], &Tensor) -> Result<Vec<Tensor>>,
{
    let mut grad_model = module.clone();
    zero_grads(&mut grad_model);
    let input_grads = backward(&mut grad_model, inputs, probe)?;
    if input_grads.len() != inputs.len() {
        return Err(Error::invalid(
            "backward returned wrong number of input gradients",
        ));
    }
    let mut analytic = flatten_grads(&grad_model);
    for g in &input_grads {
        analytic.extend_from_slice(g.data());
    }

    let mut point = flatten_values(module);
    let n_params = point.len();
    for x in inputs {
        point.extend_from_slice(x.data());
    }

    let mut scratch = module.clone();
    let mut loss = |flat: &[f64]| -> Result<f64> {
        load_values(&mut scratch, &flat[..n_params])?;
        let mut offset = n_params;
        let xs: Vec<Tensor> = inputs
            .iter()
            .map(|x| {
                let t = Tensor::new(x.shape().to_vec(), flat[offset..offset + x.len()].to_vec());
                offset += x.len();
                t
            })
            .collect::<Result<_>>()?;
        forward(&scratch, &xs)?.dot(probe)
    };
    finite_diff_check(&mut loss, &point, &analytic, h)
}
