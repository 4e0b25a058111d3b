//! Line-oriented `key = value` run configuration.
//!
//! Keys live in four sections (`model.`, `mixer.`, `train.`, `task.`). Blank
//! lines and `#` comments are ignored; unknown or repeated keys are errors
//! that carry the offending line number.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::mixing::{MixerKind, TinyAttentionConfig};
use crate::trainer::{SyntheticTaskSpec, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// `vocab` and `feature_dim` always mirror the task.
    pub model: EncoderConfig,
    pub train: TrainConfig,
    pub task: SyntheticTaskSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let task = SyntheticTaskSpec::default();
        let model = EncoderConfig {
            vocab: task.vocab,
            feature_dim: task.feature_dim,
            ..EncoderConfig::default()
        };
        Self {
            model,
            train: TrainConfig::default(),
            task,
        }
    }
}

/// Every recognised key, in serialization order.
pub const KEYS: [&str; 30] = [
    "model.d_model",
    "model.d_expanded",
    "model.layers",
    "model.subsample",
    "mixer.kind",
    "mixer.filter_len",
    "mixer.kernel_size",
    "mixer.shift",
    "mixer.n_max",
    "mixer.gated",
    "mixer.tiny_attention",
    "mixer.tiny_heads",
    "mixer.tiny_dim",
    "mixer.attn_heads",
    "mixer.attn_dim",
    "train.steps",
    "train.batch_size",
    "train.warmup",
    "train.noam_d",
    "train.clip_norm",
    "train.dropout",
    "train.eval_size",
    "task.vocab",
    "task.feature_dim",
    "task.min_labels",
    "task.max_labels",
    "task.min_frames",
    "task.max_frames",
    "task.noise",
    "task.seed",
];

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        message: format!("invalid value `{value}` for `{key}`"),
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut tiny = cfg.model.mixer.tiny_attention.is_some();
        let mut tiny_cfg = TinyAttentionConfig::default();
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            let m = &mut cfg.model;
            let x = &mut m.mixer;
            let t = &mut cfg.train;
            let s = &mut cfg.task;
            let v = value;
            match key {
                "model.d_model" => m.d_model = parse_value(line, key, v)?,
                "model.d_expanded" => m.d_expanded = parse_value(line, key, v)?,
                "model.layers" => m.layers = parse_value(line, key, v)?,
                "model.subsample" => m.subsample = parse_value(line, key, v)?,
                "mixer.kind" => x.kind = parse_value::<MixerKind>(line, key, v)?,
                "mixer.filter_len" => x.filter_len = parse_value(line, key, v)?,
                "mixer.kernel_size" => x.kernel_size = parse_value(line, key, v)?,
                "mixer.shift" => x.shift = parse_value(line, key, v)?,
                "mixer.n_max" => x.n_max = parse_value(line, key, v)?,
                "mixer.gated" => x.gated = parse_value(line, key, v)?,
                "mixer.tiny_attention" => tiny = parse_value(line, key, v)?,
                "mixer.tiny_heads" => tiny_cfg.heads = parse_value(line, key, v)?,
                "mixer.tiny_dim" => tiny_cfg.dim = parse_value(line, key, v)?,
                "mixer.attn_heads" => x.attn_heads = parse_value(line, key, v)?,
                "mixer.attn_dim" => x.attn_dim = parse_value(line, key, v)?,
                "train.steps" => t.steps = parse_value(line, key, v)?,
                "train.batch_size" => t.batch_size = parse_value(line, key, v)?,
                "train.warmup" => t.warmup = parse_value(line, key, v)?,
                "train.noam_d" => t.noam_d = parse_value(line, key, v)?,
                "train.clip_norm" => t.clip_norm = parse_value(line, key, v)?,
                "train.dropout" => t.dropout = parse_value(line, key, v)?,
                "train.eval_size" => t.eval_size = parse_value(line, key, v)?,
                "task.vocab" => s.vocab = parse_value(line, key, v)?,
                "task.feature_dim" => s.feature_dim = parse_value(line, key, v)?,
                "task.min_labels" => s.min_labels = parse_value(line, key, v)?,
                "task.max_labels" => s.max_labels = parse_value(line, key, v)?,
                "task.min_frames" => s.min_frames = parse_value(line, key, v)?,
                "task.max_frames" => s.max_frames = parse_value(line, key, v)?,
                "task.noise" => s.noise = parse_value(line, key, v)?,
                "task.seed" => s.seed = parse_value(line, key, v)?,
                _ => {
                    return Err(Error::Config {
                        line,
                        message: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        cfg.model.mixer.tiny_attention = tiny.then_some(tiny_cfg);
        cfg.model.vocab = cfg.task.vocab;
        cfg.model.feature_dim = cfg.task.feature_dim;
        Ok(cfg)
    }

    /// Check cross-field constraints; reported against line 0.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config {
            line: 0,
            message: e.to_string(),
        };
        self.model.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.task.validate().map_err(wrap)
    }

    /// Every key with its current value, one per line.
    pub fn serialize(&self) -> String {
        let m = &self.model;
        let x = &m.mixer;
        let t = &self.train;
        let s = &self.task;
        let tiny = x.tiny_attention.clone();
        let tiny_cfg = tiny.clone().unwrap_or_default();
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("model.d_model", m.d_model.to_string());
        put("model.d_expanded", m.d_expanded.to_string());
        put("model.layers", m.layers.to_string());
        put("model.subsample", m.subsample.to_string());
        put("mixer.kind", x.kind.to_string());
        put("mixer.filter_len", x.filter_len.to_string());
        put("mixer.kernel_size", x.kernel_size.to_string());
        put("mixer.shift", x.shift.to_string());
        put("mixer.n_max", x.n_max.to_string());
        put("mixer.gated", x.gated.to_string());
        put("mixer.tiny_attention", tiny.is_some().to_string());
        put("mixer.tiny_heads", tiny_cfg.heads.to_string());
        put("mixer.tiny_dim", tiny_cfg.dim.to_string());
        put("mixer.attn_heads", x.attn_heads.to_string());
        put("mixer.attn_dim", x.attn_dim.to_string());
        put("train.steps", t.steps.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.warmup", t.warmup.to_string());
        put("train.noam_d", t.noam_d.to_string());
        put("train.clip_norm", t.clip_norm.to_string());
        put("train.dropout", t.dropout.to_string());
        put("train.eval_size", t.eval_size.to_string());
        put("task.vocab", s.vocab.to_string());
        put("task.feature_dim", s.feature_dim.to_string());
        put("task.min_labels", s.min_labels.to_string());
        put("task.max_labels", s.max_labels.to_string());
        put("task.min_frames", s.min_frames.to_string());
        put("task.max_frames", s.max_frames.to_string());
        put("task.noise", s.noise.to_string());
        put("task.seed", s.seed.to_string());
        out
    }
}
