//! Randomized finite-difference checks for every differentiable unit.

use std::fmt;
use std::str::FromStr;

use crate::ctc::{ctc_backward, ctc_loss};
use crate::encoder::{Block, EncoderConfig};
use crate::error::{Error, Result};
use crate::mixing::{MixerKind, TinyAttentionConfig, TokenMixer, TokenMixerConfig};
use crate::nn::gradcheck::check_module;
use crate::nn::{
    finite_diff_check, gelu, gelu_backward, log_softmax_columns, DepthwiseConv1d, LayerNorm,
    Linear, Parameter, Params,
};
use crate::rng::Rng;
use crate::tensor::{rand_normal, Tensor};

/// Finite-difference step used by the suite.
pub const STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradUnit {
    Linear,
    Gelu,
    LayerNorm,
    Conv,
    Sgu,
    Fgu,
    Cgu,
    CguPrime,
    Tsgu,
    Fnet,
    Attn,
    Tiny,
    Block,
    Ctc,
}

impl GradUnit {
    pub const ALL: [GradUnit; 14] = [
        GradUnit::Linear,
        GradUnit::Gelu,
        GradUnit::LayerNorm,
        GradUnit::Conv,
        GradUnit::Sgu,
        GradUnit::Fgu,
        GradUnit::Cgu,
        GradUnit::CguPrime,
        GradUnit::Tsgu,
        GradUnit::Fnet,
        GradUnit::Attn,
        GradUnit::Tiny,
        GradUnit::Block,
        GradUnit::Ctc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradUnit::Linear => "linear",
            GradUnit::Gelu => "gelu",
            GradUnit::LayerNorm => "layernorm",
            GradUnit::Conv => "conv",
            GradUnit::Sgu => "sgu",
            GradUnit::Fgu => "fgu",
            GradUnit::Cgu => "cgu",
            GradUnit::CguPrime => "cgu_prime",
            GradUnit::Tsgu => "tsgu",
            GradUnit::Fnet => "fnet",
            GradUnit::Attn => "attn",
            GradUnit::Tiny => "tiny",
            GradUnit::Block => "block",
            GradUnit::Ctc => "ctc",
        }
    }

    fn mixer_kind(self) -> Option<MixerKind> {
        Some(match self {
            GradUnit::Sgu => MixerKind::Sgu,
            GradUnit::Fgu => MixerKind::Fgu,
            GradUnit::Cgu | GradUnit::Tiny => MixerKind::Cgu,
            GradUnit::CguPrime => MixerKind::CguPrime,
            GradUnit::Tsgu => MixerKind::Tsgu,
            GradUnit::Fnet => MixerKind::Fnet,
            GradUnit::Attn => MixerKind::SelfAttention,
            _ => return None,
        })
    }
}

impl fmt::Display for GradUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradUnit::ALL
            .into_iter()
            .find(|u| u.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown unit `{s}`")))
    }
}

/// Parameter-free stand-in for stateless functions.
#[derive(Clone, Debug)]
struct Stateless;

impl Params for Stateless {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Parameter)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Parameter)) {}
}

fn randomize(m: &mut dyn Params, rng: &mut Rng, std: f64) {
    m.visit_mut("", &mut |_, p| {
        p.value = rand_normal(rng, p.value.shape(), std);
    });
}

fn mixer_config(kind: MixerKind, rng: &mut Rng, n: usize) -> TokenMixerConfig {
    let mut cfg = TokenMixerConfig::new(kind);
    cfg.kernel_size = 2 * rng.int_inclusive(0, 3) + 1;
    cfg.filter_len = rng.int_inclusive(1, 9);
    cfg.shift = rng.int_inclusive(0, 2);
    cfg.n_max = n;
    cfg.attn_heads = rng.int_inclusive(1, 2);
    cfg.attn_dim = 2 * cfg.attn_heads;
    cfg
}

/// Maximum relative error between analytic and numeric gradients of `unit`
/// on an instance drawn from `seed`. Parameters and inputs are both checked.
pub fn check_unit(unit: GradUnit, seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let n = rng.int_inclusive(1, 9);
    let d = 2 * rng.int_inclusive(1, 4);
    let x = rand_normal(&mut rng, &[d, n], 1.0);
    match unit {
        GradUnit::Linear => {
            let d_out = rng.int_inclusive(1, 6);
            let mut m = Linear::new(&mut rng, d, d_out, 1.0);
            randomize(&mut m, &mut rng, 0.5);
            let probe = rand_normal(&mut rng, &[d_out, n], 1.0);
            check_module(
                &m,
                &[x],
                &probe,
                STEP,
                |m, xs| Ok(m.forward(&xs[0])?.0),
                |m, xs, dy| Ok(vec![m.backward(&xs[0], dy)?]),
            )
        }
        GradUnit::Gelu => {
            let probe = rand_normal(&mut rng, &[d, n], 1.0);
            check_module(
                &Stateless,
                &[x],
                &probe,
                STEP,
                |_, xs| Ok(gelu(&xs[0])),
                |_, xs, dy| Ok(vec![gelu_backward(&xs[0], dy)]),
            )
        }
        GradUnit::LayerNorm => {
            let mut m = LayerNorm::new(d);
            randomize(&mut m, &mut rng, 1.0);
            let probe = rand_normal(&mut rng, &[d, n], 1.0);
            check_module(
                &m,
                &[x],
                &probe,
                STEP,
                |m, xs| Ok(m.forward(&xs[0])?.0),
                |m, xs, dy| {
                    let (_, c) = m.forward(&xs[0])?;
                    Ok(vec![m.backward(&c, dy)?])
                },
            )
        }
        GradUnit::Conv => {
            let k = 2 * rng.int_inclusive(0, 7) + 1;
            let m = DepthwiseConv1d::new(rand_normal(&mut rng, &[d, k], 1.0))?;
            let probe = rand_normal(&mut rng, &[d, n], 1.0);
            check_module(
                &m,
                &[x],
                &probe,
                STEP,
                |m, xs| Ok(m.forward(&xs[0])?.0),
                |m, xs, dy| Ok(vec![m.backward(&xs[0], dy)?]),
            )
        }
        GradUnit::Block => {
            let kind = [MixerKind::Cgu, MixerKind::Fgu, MixerKind::Fnet][rng.int_inclusive(0, 2)];
            let cfg = EncoderConfig {
                d_model: d,
                d_expanded: 2 * d,
                layers: 1,
                mixer: mixer_config(kind, &mut rng, n),
                vocab: 2,
                feature_dim: 1,
                subsample: false,
            };
            let mut m = Block::new(&cfg, &mut rng)?;
            randomize(&mut m, &mut rng, 0.4);
            let probe = rand_normal(&mut rng, &[d, n], 1.0);
            check_module(
                &m,
                &[x],
                &probe,
                STEP,
                |m, xs| Ok(m.forward(&xs[0], None)?.0),
                |m, xs, dy| {
                    let (_, c) = m.forward(&xs[0], None)?;
                    Ok(vec![m.backward(&c, dy)?])
                },
            )
        }
        GradUnit::Ctc => {
            let vocab = rng.int_inclusive(2, 5);
            let t = rng.int_inclusive(3, 8);
            let len = rng.int_inclusive(1, t / 2);
            let target: Vec<usize> = (0..len).map(|_| rng.int_inclusive(1, vocab - 1)).collect();
            let logits = rand_normal(&mut rng, &[vocab, t], 1.0);
            let lp = log_softmax_columns(&logits);
            let analytic = ctc_backward(&lp, &target)?;
            let shape = logits.shape().to_vec();
            let mut loss = |p: &[f64]| {
                let z = Tensor::new(shape.clone(), p.to_vec())?;
                Ok(ctc_loss(&log_softmax_columns(&z), &target)?.value)
            };
            finite_diff_check(&mut loss, logits.data(), analytic.data(), STEP)
        }
        mixer => {
            let kind = mixer.mixer_kind().expect("remaining units are mixers");
            let mut cfg = mixer_config(kind, &mut rng, n);
            // TSGU shifts half the gate channels each way
            let width = if kind == MixerKind::Tsgu { 2 * d } else { d };
            let x = if width == d {
                x
            } else {
                rand_normal(&mut rng, &[width, n], 1.0)
            };
            let d_ctx = rng.int_inclusive(1, 4);
            if mixer == GradUnit::Tiny {
                cfg.tiny_attention = Some(TinyAttentionConfig { heads: 1, dim: 4 });
            }
            let mut m = TokenMixer::new(&cfg, width, d_ctx, &mut rng)?;
            randomize(&mut m, &mut rng, 0.5);
            let ctx = rand_normal(&mut rng, &[d_ctx, n], 1.0);
            let probe = rand_normal(&mut rng, &[cfg.output_dim(width), n], 1.0);
            check_module(
                &m,
                &[x, ctx],
                &probe,
                STEP,
                |m, xs| Ok(m.forward(&xs[0], &xs[1])?.0),
                |m, xs, dy| {
                    let (_, c) = m.forward(&xs[0], &xs[1])?;
                    let (dx, dctx) = m.backward(&c, dy)?;
                    Ok(vec![
                        dx,
                        dctx.unwrap_or_else(|| Tensor::zeros(xs[1].shape())),
                    ])
                },
            )
        }
    }
}
