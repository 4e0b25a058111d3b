//! Seeded synthetic sequence-labelling task.
//!
//! Each label owns a fixed random prototype vector. An item is a label
//! sequence rendered as prototype frames, each label held for a random number
//! of frames, plus Gaussian noise.

use crate::encoder::SequenceBatch;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{rand_normal, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTaskSpec {
    /// Label count including the blank.
    pub vocab: usize,
    pub feature_dim: usize,
    pub min_labels: usize,
    pub max_labels: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub noise: f64,
    /// Seed of the prototypes; batches draw from the caller's generator.
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            vocab: 5,
            feature_dim: 8,
            min_labels: 2,
            max_labels: 6,
            min_frames: 2,
            max_frames: 4,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(Error::invalid(
                "task needs at least one label besides the blank",
            ));
        }
        if self.vocab == 2 && self.max_labels > 1 {
            return Err(Error::invalid(
                "a single label cannot form sequences without adjacent repeats",
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("task feature_dim must be positive"));
        }
        if self.min_labels == 0 || self.min_labels > self.max_labels {
            return Err(Error::invalid(format!(
                "label range [{}, {}] is empty or starts at zero",
                self.min_labels, self.max_labels
            )));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::invalid(format!(
                "frame range [{}, {}] is empty or starts at zero",
                self.min_frames, self.max_frames
            )));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::invalid("task noise must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticTask {
    spec: SyntheticTaskSpec,
    /// Row `c − 1` is the prototype of label `c`.
    prototypes: Tensor,
}

impl SyntheticTask {
    pub fn new(spec: SyntheticTaskSpec) -> Result<Self> {
        spec.validate()?;
        let prototypes = rand_normal(
            &mut Rng::new(spec.seed),
            &[spec.vocab - 1, spec.feature_dim],
            1.0,
        );
        Ok(Self { spec, prototypes })
    }

    pub fn spec(&self) -> &SyntheticTaskSpec {
        &self.spec
    }

    pub fn prototype(&self, label: usize) -> &[f64] {
        self.prototypes.row(label - 1)
    }

    /// Labels are uniform over `1..vocab` with no label repeated back to
    /// back, so every label boundary is visible in the features.
    pub fn sample_labels(&self, rng: &mut Rng) -> Vec<usize> {
        let s = &self.spec;
        let len = rng.int_inclusive(s.min_labels, s.max_labels);
        let mut labels: Vec<usize> = Vec::with_capacity(len);
        for _ in 0..len {
            let label = match labels.last() {
                None => rng.int_inclusive(1, s.vocab - 1),
                Some(&prev) => {
                    let l = rng.int_inclusive(1, s.vocab - 2);
                    if l >= prev {
                        l + 1
                    } else {
                        l
                    }
                }
            };
            labels.push(label);
        }
        labels
    }

    /// Render `labels` with explicit frame counts.
    pub fn render(&self, labels: &[usize], frames: &[usize], rng: &mut Rng) -> Tensor {
        let n: usize = frames.iter().sum();
        let f = self.spec.feature_dim;
        let mut x = Tensor::zeros(&[f, n]);
        let mut t = 0;
        for (&label, &r) in labels.iter().zip(frames) {
            for _ in 0..r {
                for c in 0..f {
                    x.set(
                        c,
                        t,
                        self.prototype(label)[c] + self.spec.noise * rng.normal(),
                    );
                }
                t += 1;
            }
        }
        x
    }

    pub fn generate_batch(&self, rng: &mut Rng, batch_size: usize) -> SequenceBatch {
        let s = &self.spec;
        let mut features = Vec::with_capacity(batch_size);
        let mut targets = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let labels = self.sample_labels(rng);
            let frames: Vec<usize> = labels
                .iter()
                .map(|_| rng.int_inclusive(s.min_frames, s.max_frames))
                .collect();
            features.push(self.render(&labels, &frames, rng));
            targets.push(labels);
        }
        SequenceBatch { features, targets }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_single_frames_are_prototypes() {
        let spec = SyntheticTaskSpec {
            noise: 0.0,
            min_frames: 1,
            max_frames: 1,
            ..SyntheticTaskSpec::default()
        };
        let task = SyntheticTask::new(spec).unwrap();
        let batch = task.generate_batch(&mut Rng::new(3), 8);
        for (x, y) in batch.features.iter().zip(&batch.targets) {
            assert_eq!(x.cols(), y.len());
            for (t, &label) in y.iter().enumerate() {
                assert_eq!(x.column(t), task.prototype(label).to_vec());
            }
        }
    }

    #[test]
    fn noiseless_prototypes_separate_by_nearest_neighbour() {
        let spec = SyntheticTaskSpec {
            noise: 0.0,
            ..SyntheticTaskSpec::default()
        };
        let task = SyntheticTask::new(spec).unwrap();
        let batch = task.generate_batch(&mut Rng::new(1), 16);
        for (x, y) in batch.features.iter().zip(&batch.targets) {
            let mut path = Vec::new();
            for t in 0..x.cols() {
                let col = x.column(t);
                let best = (1..5)
                    .min_by(|&a, &b| {
                        let da: f64 = task
                            .prototype(a)
                            .iter()
                            .zip(&col)
                            .map(|(p, v)| (p - v).powi(2))
                            .sum();
                        let db: f64 = task
                            .prototype(b)
                            .iter()
                            .zip(&col)
                            .map(|(p, v)| (p - v).powi(2))
                            .sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                path.push(best);
            }
            assert_eq!(crate::ctc::collapse(&path), *y);
        }
    }

    #[test]
    fn same_seed_same_batch() {
        let task = SyntheticTask::new(SyntheticTaskSpec::default()).unwrap();
        let a = task.generate_batch(&mut Rng::new(9), 4);
        let b = task.generate_batch(&mut Rng::new(9), 4);
        assert_eq!(a, b);
        assert_ne!(a, task.generate_batch(&mut Rng::new(10), 4));
    }

    #[test]
    fn lengths_and_labels_stay_in_range() {
        let spec = SyntheticTaskSpec::default();
        let task = SyntheticTask::new(spec.clone()).unwrap();
        let batch = task.generate_batch(&mut Rng::new(0), 200);
        for (x, y) in batch.features.iter().zip(&batch.targets) {
            let n = x.cols();
            assert!(n >= spec.min_labels * spec.min_frames);
            assert!(n <= spec.max_labels * spec.max_frames);
            assert!((spec.min_labels..=spec.max_labels).contains(&y.len()));
            assert!(y.iter().all(|&l| (1..spec.vocab).contains(&l)));
            assert!(y.windows(2).all(|w| w[0] != w[1]));
        }
        let seen: std::collections::BTreeSet<usize> =
            batch.targets.iter().flatten().copied().collect();
        assert_eq!(seen.len(), spec.vocab - 1);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = [
            SyntheticTaskSpec {
                vocab: 1,
                ..Default::default()
            },
            SyntheticTaskSpec {
                min_labels: 0,
                ..Default::default()
            },
            SyntheticTaskSpec {
                min_frames: 5,
                max_frames: 4,
                ..Default::default()
            },
            SyntheticTaskSpec {
                noise: f64::NAN,
                ..Default::default()
            },
        ];
        for spec in bad {
            assert!(SyntheticTask::new(spec).is_err());
        }
    }
}
