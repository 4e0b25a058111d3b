use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::tensor::Tensor;

/// Standard normal CDF `Φ(x) = ½(1 + erf(x/√2))`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(|v| v * normal_cdf(v))
}

/// `dx = dy · (Φ(x) + x·φ(x))`.
pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut out = dy.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(x.data()) {
        *g *= normal_cdf(v) + v * normal_pdf(v);
    }
    out
}

/// Softmax along each row, with max subtraction. Entries equal to `-inf`
/// receive zero weight; a row must contain at least one finite entry.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    for r in 0..x.rows() {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Log-softmax down each column (over the vocabulary for one frame).
pub fn log_softmax_columns(x: &Tensor) -> Tensor {
    let (rows, cols) = (x.rows(), x.cols());
    let mut out = x.clone();
    for c in 0..cols {
        let max = (0..rows)
            .map(|r| x.at(r, c))
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + (0..rows)
                .map(|r| (x.at(r, c) - max).exp())
                .sum::<f64>()
                .ln();
        for r in 0..rows {
            out.set(r, c, x.at(r, c) - lse);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_values() {
        let y = gelu(&Tensor::vector(vec![0.0, 1.0]));
        assert_eq!(y.data()[0], 0.0);
        // Φ(1) = 0.841344746...
        assert!((y.data()[1] - 0.841_344_746_068_543).abs() < 1e-12);
    }

    #[test]
    fn gelu_matches_definition_on_grid() {
        // Φ by composite Simpson quadrature of the normal density, independent of libm::erf
        fn phi_quadrature(x: f64) -> f64 {
            let m = 4000;
            let h = x / m as f64;
            let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
            let mut s = f(0.0) + f(x);
            for i in 1..m {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * f(i as f64 * h);
            }
            0.5 + s * h / 3.0
        }
        for i in 0..=100 {
            let x = -5.0 + 0.1 * i as f64;
            let phi = phi_quadrature(x);
            let g = gelu(&Tensor::vector(vec![x])).data()[0];
            assert!((g - x * phi).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Tensor::from_rows(&[&[0.0, 0.0]]));
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&Tensor::from_rows(&[&[1000.0, 1000.0]]));
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&Tensor::from_rows(&[&[0.3, f64::NEG_INFINITY]]));
        assert_eq!(s.data(), &[1.0, 0.0]);

        let mut rng = crate::Rng::new(4);
        let x = crate::tensor::rand_uniform(&mut rng, &[6, 9], -20.0, 20.0).unwrap();
        let s = softmax_rows(&x);
        for r in 0..6 {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_columns_normalize() {
        let mut rng = crate::Rng::new(8);
        let x = crate::tensor::rand_uniform(&mut rng, &[5, 7], -3.0, 3.0).unwrap();
        let y = log_softmax_columns(&x);
        for c in 0..7 {
            let s: f64 = y.column(c).iter().map(|v| v.exp()).sum();
            assert!((s.ln()).abs() < 1e-12);
        }
    }
}
