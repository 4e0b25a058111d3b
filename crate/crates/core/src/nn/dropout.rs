use crate::rng::Rng;
use crate::tensor::Tensor;

/// Inverted dropout driven by its own generator.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub rate: f64,
    rng: Rng,
}

impl Dropout {
    pub fn new(rate: f64, rng: Rng) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Self { rate, rng }
    }

    /// A mask scaled by `1/(1−rate)`, or `None` when the rate is zero.
    pub fn mask(&mut self, shape: &[usize]) -> Option<Tensor> {
        if self.rate == 0.0 {
            return None;
        }
        let keep = 1.0 - self.rate;
        let mut m = Tensor::zeros(shape);
        for v in m.data_mut() {
            if self.rng.uniform() < keep {
                *v = 1.0 / keep;
            }
        }
        Some(m)
    }
}
