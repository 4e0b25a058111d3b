//! Optimization, the synthetic task and the training loop.

mod optim;
mod task;

pub use optim::{clip_grad_norm, Adam, NoamSchedule};
pub use task::{SyntheticTask, SyntheticTaskSpec};

use std::fmt;

use crate::ctc::{ctc_backward, ctc_loss, edit_distance, greedy_decode, min_frames};
use crate::encoder::{Encoder, EncoderConfig, SequenceBatch};
use crate::error::{Error, Result};
use crate::nn::{zero_grads, Dropout};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub warmup: usize,
    pub noam_d: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
    pub dropout: f64,
    pub eval_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 16,
            warmup: 500,
            noam_d: 1280.0,
            clip_norm: 5.0,
            dropout: 0.1,
            eval_size: 200,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Result<NoamSchedule> {
        NoamSchedule::new(self.warmup, self.noam_d)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::invalid("clip_norm must be non-negative"));
        }
        Ok(())
    }
}

/// Independent generators derived from one seed.
#[derive(Clone, Debug)]
pub struct SeedStreams {
    pub init: Rng,
    pub batches: Rng,
    pub dropout: Rng,
    pub eval: Rng,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        let mut master = Rng::new(seed);
        Self {
            init: master.fork(),
            batches: master.fork(),
            dropout: master.fork(),
            eval: master.fork(),
        }
    }
}

/// Model initialized from the seed's init stream.
pub fn init_model(cfg: &EncoderConfig, seed: u64) -> Result<Encoder> {
    Encoder::new(cfg, &mut SeedStreams::new(seed).init)
}

/// The held-out batch used for evaluation under `seed`.
pub fn eval_batch(task: &SyntheticTask, seed: u64, size: usize) -> SequenceBatch {
    task.generate_batch(&mut SeedStreams::new(seed).eval, size)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    /// CTC loss per output frame.
    pub loss: f64,
    /// Gradient norm before clipping.
    pub gnorm: f64,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} lr={:.9e} loss={:.9} gnorm={:.9}",
            self.step, self.lr, self.loss, self.gnorm
        )
    }
}

/// Loss statistics of one forward/backward pass over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    /// Summed CTC loss divided by the output frames of feasible items.
    pub per_frame: f64,
    pub frames: usize,
    pub infeasible: usize,
}

/// Forward and backward over a batch, accumulating gradients of the
/// per-frame loss. Items whose targets cannot fit their frames are skipped.
pub fn accumulate_batch(
    model: &mut Encoder,
    batch: &SequenceBatch,
    mut dropout: Option<&mut Dropout>,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let cfg = model.config().clone();
    let feasible: Vec<bool> = batch
        .features
        .iter()
        .zip(&batch.targets)
        .map(|(x, y)| cfg.output_len(x.cols()) >= min_frames(y).max(1))
        .collect();
    let frames: usize = batch
        .features
        .iter()
        .zip(&feasible)
        .filter(|(_, ok)| **ok)
        .map(|(x, _)| cfg.output_len(x.cols()))
        .sum();
    let infeasible = feasible.iter().filter(|ok| !**ok).count();
    if frames == 0 {
        return Ok(BatchLoss {
            per_frame: f64::NAN,
            frames,
            infeasible,
        });
    }
    let scale = 1.0 / frames as f64;
    let mut total = 0.0;
    for ((x, y), ok) in batch.features.iter().zip(&batch.targets).zip(&feasible) {
        if !ok {
            continue;
        }
        let (lp, cache) = model.forward(x, dropout.as_deref_mut())?;
        let loss = ctc_loss(&lp, y)?;
        total += loss.value;
        if !loss.value.is_finite() {
            continue;
        }
        let grad = ctc_backward(&lp, y)?.scale(scale);
        model.backward(&cache, &grad)?;
    }
    Ok(BatchLoss {
        per_frame: total * scale,
        frames,
        infeasible,
    })
}

/// Per-frame loss of a batch without touching gradients.
pub fn batch_loss(model: &Encoder, batch: &SequenceBatch) -> Result<f64> {
    let mut total = 0.0;
    let mut frames = 0;
    for (lp, y) in model.log_probs(batch)?.iter().zip(&batch.targets) {
        let loss = ctc_loss(lp, y)?;
        if loss.feasible {
            total += loss.value;
            frames += lp.cols();
        }
    }
    Ok(total / frames as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedItem {
    pub target: Vec<usize>,
    pub hypothesis: Vec<usize>,
    pub distance: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub items: Vec<DecodedItem>,
}

impl EvalReport {
    pub fn edits(&self) -> usize {
        self.items.iter().map(|i| i.distance).sum()
    }

    pub fn labels(&self) -> usize {
        self.items.iter().map(|i| i.target.len()).sum()
    }

    /// Total edit distance over total target length.
    pub fn token_error_rate(&self) -> f64 {
        self.edits() as f64 / self.labels() as f64
    }

    /// Fraction of exactly recovered items.
    pub fn sequence_accuracy(&self) -> f64 {
        let exact = self.items.iter().filter(|i| i.distance == 0).count();
        exact as f64 / self.items.len() as f64
    }

    pub fn summary(&self) -> String {
        format!(
            "ter={:.6} seq_acc={:.6} items={} edits={} labels={}",
            self.token_error_rate(),
            self.sequence_accuracy(),
            self.items.len(),
            self.edits(),
            self.labels()
        )
    }

    /// One line per item followed by the summary record.
    pub fn render(&self) -> String {
        let join = |s: &[usize]| {
            s.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        for (i, item) in self.items.iter().enumerate() {
            out.push_str(&format!(
                "item={i} target={} hyp={} dist={}\n",
                join(&item.target),
                join(&item.hypothesis),
                item.distance
            ));
        }
        out.push_str(&self.summary());
        out.push('\n');
        out
    }
}

pub fn score(targets: &[Vec<usize>], hypotheses: Vec<Vec<usize>>) -> EvalReport {
    let items = targets
        .iter()
        .zip(hypotheses)
        .map(|(t, h)| DecodedItem {
            distance: edit_distance(t, &h),
            target: t.clone(),
            hypothesis: h,
        })
        .collect();
    EvalReport { items }
}

/// Greedy-decode every item and score it against its target.
pub fn evaluate(model: &Encoder, batch: &SequenceBatch) -> Result<EvalReport> {
    let hyps = model.log_probs(batch)?.iter().map(greedy_decode).collect();
    Ok(score(&batch.targets, hyps))
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub records: Vec<StepRecord>,
    pub eval: EvalReport,
    pub skipped_updates: usize,
    pub infeasible_items: usize,
}

impl TrainSummary {
    pub fn log_text(&self) -> String {
        self.records.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// Train `model` for `cfg.steps` steps on fresh batches, then evaluate on the
/// seed's held-out batch. `on_step` sees every record as it is produced.
pub fn train(
    model: &mut Encoder,
    task: &SyntheticTask,
    cfg: &TrainConfig,
    seed: u64,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainSummary> {
    cfg.validate()?;
    if task.spec().feature_dim != model.config().feature_dim
        || task.spec().vocab != model.config().vocab
    {
        return Err(Error::invalid(
            "task feature_dim/vocab do not match the model",
        ));
    }
    let schedule = cfg.schedule()?;
    let mut streams = SeedStreams::new(seed);
    let mut dropout = Dropout::new(cfg.dropout, streams.dropout.clone());
    let mut adam = Adam::new(model);
    zero_grads(model);
    let mut records = Vec::with_capacity(cfg.steps);
    let mut infeasible_items = 0;
    for step in 1..=cfg.steps {
        let batch = task.generate_batch(&mut streams.batches, cfg.batch_size);
        let loss = accumulate_batch(model, &batch, Some(&mut dropout))?;
        infeasible_items += loss.infeasible;
        if !loss.per_frame.is_finite() && loss.frames > 0 {
            return Err(Error::Diverged {
                step,
                loss: loss.per_frame,
            });
        }
        let gnorm = if cfg.clip_norm > 0.0 {
            clip_grad_norm(model, cfg.clip_norm)
        } else {
            crate::nn::grad_norm(model)
        };
        let lr = schedule.lr(step)?;
        adam.step(model, lr)?;
        let record = StepRecord {
            step,
            lr,
            loss: loss.per_frame,
            gnorm,
        };
        on_step(&record);
        records.push(record);
    }
    let eval = evaluate(model, &eval_batch(task, seed, cfg.eval_size.max(1)))?;
    Ok(TrainSummary {
        records,
        eval,
        skipped_updates: adam.skipped(),
        infeasible_items,
    })
}
