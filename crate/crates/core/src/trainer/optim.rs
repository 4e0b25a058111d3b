use crate::error::{Error, Result};
use crate::nn::{Parameter, Params};
use crate::tensor::Tensor;

/// Warmup followed by inverse square-root decay:
/// `d^{-1/2}·min(step^{-1/2}, step·warmup^{-3/2})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoamSchedule {
    pub warmup: usize,
    pub d_model: f64,
}

impl NoamSchedule {
    /// Constants used for full-scale training runs.
    pub const REFERENCE: NoamSchedule = NoamSchedule {
        warmup: 25_000,
        d_model: 1280.0,
    };

    pub fn new(warmup: usize, d_model: f64) -> Result<Self> {
        if warmup == 0 || !(d_model > 0.0) {
            return Err(Error::invalid(format!(
                "noam schedule needs positive warmup and d, got {warmup} and {d_model}"
            )));
        }
        Ok(Self { warmup, d_model })
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        if step == 0 {
            return Err(Error::invalid("noam schedule is defined from step 1"));
        }
        let s = step as f64;
        let w = self.warmup as f64;
        Ok(self.d_model.powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
    }
}

impl Default for NoamSchedule {
    fn default() -> Self {
        Self {
            warmup: 500,
            d_model: 1280.0,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    skipped: usize,
}

impl Adam {
    pub fn new(params: &dyn Params) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, p| m.push(Tensor::zeros(p.value.shape())));
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            step: 0,
            v: m.clone(),
            m,
            skipped: 0,
        }
    }

    /// Updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates refused because of a non-finite gradient.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Apply one update and zero the gradients. Returns `false`, leaving the
    /// parameters untouched, when any gradient is non-finite.
    pub fn step(&mut self, params: &mut dyn Params, lr: f64) -> Result<bool> {
        let mut count = 0;
        let mut finite = true;
        params.visit("", &mut |_, p| {
            count += 1;
            finite &= p.grad.all_finite();
        });
        if count != self.m.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} tensors, model has {count}",
                self.m.len()
            )));
        }
        if !finite {
            self.skipped += 1;
            params.visit_mut("", &mut |_, p| p.zero_grad());
            return Ok(false);
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut i = 0;
        params.visit_mut("", &mut |_, p: &mut Parameter| {
            let m = ms[i].data_mut();
            let v = vs[i].data_mut();
            let grad = p.grad.data();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
            p.zero_grad();
            i += 1;
        });
        Ok(true)
    }
}

/// Scale gradients so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(params: &mut dyn Params, max_norm: f64) -> f64 {
    let norm = crate::nn::grad_norm(params);
    if norm.is_finite() && norm > max_norm {
        let s = max_norm / norm;
        params.visit_mut("", &mut |_, p| {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        });
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_schedule_values() {
        let s = NoamSchedule::REFERENCE;
        let peak = s.lr(25_000).unwrap();
        assert!((peak - 1.0 / (1280.0f64 * 25_000.0).sqrt()).abs() < 1e-15);
        assert!((peak - 1.7678e-4).abs() < 1e-8);
        let first = s.lr(1).unwrap();
        assert!((first - 1280f64.powf(-0.5) * 25_000f64.powf(-1.5)).abs() < 1e-20);
        assert!((first - 7.07e-9).abs() < 1e-11);
        assert!(s.lr(24_999).unwrap() < peak && peak > s.lr(25_001).unwrap());
        assert!(s.lr(0).is_err());
    }

    #[test]
    fn schedule_is_positive() {
        let s = NoamSchedule::default();
        for step in [1, 10, 499, 500, 501, 100_000] {
            assert!(s.lr(step).unwrap() > 0.0);
        }
    }

    fn single(value: f64, grad: f64) -> Parameter {
        let mut p = Parameter::new(Tensor::vector(vec![value]));
        p.grad = Tensor::vector(vec![grad]);
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single(1.5, 0.0);
        let mut adam = Adam::new(&p);
        for _ in 0..5 {
            assert!(adam.step(&mut p, 0.1).unwrap());
        }
        assert_eq!(p.value.data(), &[1.5]);
    }

    #[test]
    fn first_step_by_hand() {
        let g = 0.3;
        let lr = 0.01;
        let mut p = single(2.0, g);
        let mut adam = Adam::new(&p);
        adam.step(&mut p, lr).unwrap();
        // m̂ = g, v̂ = g², so Δ = −lr·g/(|g|+ε)
        let m_hat = (0.1 * g) / (1.0 - 0.9);
        let v_hat = (0.02 * g * g) / (1.0 - 0.98);
        let expect = 2.0 - lr * m_hat / (v_hat.sqrt() + 1e-9);
        assert!((p.value.data()[0] - expect).abs() < 1e-15);
        assert!((p.value.data()[0] - (2.0 - lr * g / (g + 1e-9))).abs() < 1e-12);
        assert_eq!(p.grad.data(), &[0.0]);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut p = single(0.0, -2.0);
        let mut adam = Adam::new(&p);
        let mut last = 0.0;
        for _ in 0..50 {
            p.grad = Tensor::vector(vec![-2.0]);
            adam.step(&mut p, 0.01).unwrap();
            assert!(p.value.data()[0] > last);
            last = p.value.data()[0];
        }
    }

    #[test]
    fn non_finite_gradients_are_skipped() {
        let mut p = single(1.0, f64::NAN);
        let mut adam = Adam::new(&p);
        assert!(!adam.step(&mut p, 0.1).unwrap());
        assert_eq!(p.value.data(), &[1.0]);
        assert_eq!(adam.skipped(), 1);
        assert_eq!(adam.steps(), 0);
        assert_eq!(p.grad.data(), &[0.0]);
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let mut p = Parameter::new(Tensor::vector(vec![0.0, 0.0]));
        p.grad = Tensor::vector(vec![3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut p, 1.0), 5.0);
        assert!((crate::nn::grad_norm(&p) - 1.0).abs() < 1e-15);
        assert_eq!(clip_grad_norm(&mut p, 5.0), crate::nn::grad_norm(&p));
    }
}
