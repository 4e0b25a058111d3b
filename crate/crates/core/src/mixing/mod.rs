//! Token-mixing units.
//!
//! The gated units split their input `X` (`[D′ × N]`) into a residual half
//! `X_r` (first `D′/2` channels) and a gate half `X_g` (the rest), transform
//! `X_g` along the token axis, and return `X_r ⊙ H`. The gate transform is
//! what distinguishes them:
//!
//! | kind        | gate transform `H`                         | length  |
//! |-------------|--------------------------------------------|---------|
//! | `sgu`       | dense projection across tokens             | fixed   |
//! | `fgu`       | circular convolution via FFT               | any     |
//! | `cgu`       | depthwise convolution                      | any     |
//! | `cgu_prime` | depthwise convolution + channel projection | any     |
//! | `tsgu`      | fixed ±s token shift, no parameters        | any     |
//!
//! Any gated unit can additionally receive a single-head "tiny" attention
//! branch, computed from the normalized block input and added to `H`.
//! `fnet` and `self_attention` are the non-gated baselines.

mod attention;
pub mod fnet;
pub mod fourier;
pub mod gates;

pub use attention::{AttentionCache, MultiHeadAttention};
pub use gates::{shift_gate, shift_gate_via_conv, shift_kernel, Gate, GateCache};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{join, Parameter, Params};
use crate::rng::Rng;
use crate::tensor::{rand_uniform, Tensor};
use fourier::{circular_filter, circular_filter_backward};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MixerKind {
    Sgu,
    Fgu,
    Cgu,
    CguPrime,
    Tsgu,
    Fnet,
    SelfAttention,
}

impl MixerKind {
    pub const ALL: [MixerKind; 7] = [
        MixerKind::Sgu,
        MixerKind::Fgu,
        MixerKind::Cgu,
        MixerKind::CguPrime,
        MixerKind::Tsgu,
        MixerKind::Fnet,
        MixerKind::SelfAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MixerKind::Sgu => "sgu",
            MixerKind::Fgu => "fgu",
            MixerKind::Cgu => "cgu",
            MixerKind::CguPrime => "cgu_prime",
            MixerKind::Tsgu => "tsgu",
            MixerKind::Fnet => "fnet",
            MixerKind::SelfAttention => "self_attention",
        }
    }

    /// Kinds that sit between the two channel projections of a gated block.
    /// The others replace self-attention in a Transformer-style block.
    pub fn in_gated_block(self) -> bool {
        !matches!(self, MixerKind::Fnet | MixerKind::SelfAttention)
    }
}

impl fmt::Display for MixerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MixerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MixerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mixer kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TinyAttentionConfig {
    pub heads: usize,
    pub dim: usize,
}

impl Default for TinyAttentionConfig {
    fn default() -> Self {
        Self { heads: 1, dim: 128 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenMixerConfig {
    pub kind: MixerKind,
    /// Fourier filter length `l`.
    pub filter_len: usize,
    /// Depthwise kernel size `k`, odd.
    pub kernel_size: usize,
    /// Temporal shift `s`; the equivalent kernel has `2s + 1` taps.
    pub shift: usize,
    /// Token count for the fixed-length spatial gate.
    pub n_max: usize,
    /// Fourier unit in split-and-gate form; `false` filters all channels.
    pub gated: bool,
    pub tiny_attention: Option<TinyAttentionConfig>,
    /// Heads and width of the full self-attention baseline.
    pub attn_heads: usize,
    pub attn_dim: usize,
}

impl Default for TokenMixerConfig {
    fn default() -> Self {
        Self {
            kind: MixerKind::Cgu,
            filter_len: 15,
            kernel_size: 15,
            shift: 2,
            n_max: 0,
            gated: true,
            tiny_attention: None,
            attn_heads: 4,
            attn_dim: 256,
        }
    }
}

impl TokenMixerConfig {
    pub fn new(kind: MixerKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// Whether the unit splits its input into residual and gate halves.
    pub fn is_gated(&self) -> bool {
        match self.kind {
            MixerKind::Fnet | MixerKind::SelfAttention => false,
            MixerKind::Fgu => self.gated,
            _ => true,
        }
    }

    /// Channels produced from `d_in` input channels.
    pub fn output_dim(&self, d_in: usize) -> usize {
        if self.is_gated() {
            d_in / 2
        } else {
            d_in
        }
    }

    pub fn validate(&self, d_in: usize) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.is_gated() && d_in % 2 != 0 {
            return fail(format!(
                "{}: gated unit needs an even width, got {d_in}",
                self.kind
            ));
        }
        match self.kind {
            MixerKind::Sgu if self.n_max == 0 => {
                return fail("sgu: n_max must be set".into());
            }
            MixerKind::Fgu if self.filter_len == 0 => {
                return fail("fgu: filter length must be positive".into());
            }
            MixerKind::Cgu | MixerKind::CguPrime if self.kernel_size % 2 == 0 => {
                return fail(format!(
                    "{}: kernel size {} must be odd",
                    self.kind, self.kernel_size
                ));
            }
            MixerKind::Tsgu if (d_in / 2) % 2 != 0 => {
                return fail(format!(
                    "tsgu: gate width {} must be even to shift half each way",
                    d_in / 2
                ));
            }
            MixerKind::SelfAttention
                if self.attn_heads == 0 || self.attn_dim % self.attn_heads != 0 =>
            {
                return fail(format!(
                    "self_attention: width {} not divisible by {} heads",
                    self.attn_dim, self.attn_heads
                ));
            }
            _ => {}
        }
        if let Some(tiny) = &self.tiny_attention {
            if !self.is_gated() {
                return fail(format!("{}: tiny attention needs a gated unit", self.kind));
            }
            if tiny.heads == 0 || tiny.dim % tiny.heads != 0 {
                return fail(format!(
                    "tiny attention width {} not divisible by {} heads",
                    tiny.dim, tiny.heads
                ));
            }
        }
        Ok(())
    }
}

/// Split-and-gate unit with an optional tiny attention branch.
#[derive(Clone, Debug, PartialEq)]
pub struct GatingUnit {
    pub gate: Gate,
    pub tiny: Option<MultiHeadAttention>,
}

/// Output projection scale of the tiny attention branch at initialization.
const TINY_OUT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub enum TokenMixer {
    Gated(GatingUnit),
    /// Ungated circular filtering of every channel.
    Filter {
        filter: Parameter,
    },
    Fnet,
    Attention(MultiHeadAttention),
}

#[derive(Clone, Debug)]
pub enum MixerCache {
    Gated {
        residual: Tensor,
        gate_out: Tensor,
        gate: GateCache,
        tiny: Option<AttentionCache>,
    },
    Filter {
        input: Tensor,
    },
    Fnet,
    Attention(AttentionCache),
}

impl TokenMixer {
    /// `d_in` is the unit's input width; `d_context` is the width of the block
    /// input that feeds the tiny attention branch.
    pub fn new(
        cfg: &TokenMixerConfig,
        d_in: usize,
        d_context: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate(d_in)?;
        let half = d_in / 2;
        let gate = match cfg.kind {
            MixerKind::Sgu => Gate::spatial(rng, cfg.n_max),
            MixerKind::Fgu if cfg.gated => Gate::fourier(rng, half, cfg.filter_len),
            MixerKind::Fgu => {
                let bound = gates::KERNEL_INIT_SCALE / (cfg.filter_len as f64).sqrt();
                // identity tap plus a small perturbation
                let mut filter = rand_uniform(rng, &[d_in, cfg.filter_len], -bound, bound)?;
                for r in 0..d_in {
                    let v = filter.at(r, 0);
                    filter.set(r, 0, v + 1.0);
                }
                return Ok(TokenMixer::Filter {
                    filter: Parameter::new(filter),
                });
            }
            MixerKind::Cgu => Gate::conv(rng, half, cfg.kernel_size)?,
            MixerKind::CguPrime => Gate::conv_proj(rng, half, cfg.kernel_size)?,
            MixerKind::Tsgu => Gate::Shift { shift: cfg.shift },
            MixerKind::Fnet => return Ok(TokenMixer::Fnet),
            MixerKind::SelfAttention => {
                return Ok(TokenMixer::Attention(MultiHeadAttention::new(
                    rng,
                    d_in,
                    cfg.attn_dim,
                    cfg.attn_heads,
                    d_in,
                    1.0,
                )?));
            }
        };
        let tiny = cfg
            .tiny_attention
            .as_ref()
            .map(|t| MultiHeadAttention::new(rng, d_context, t.dim, t.heads, half, TINY_OUT_SCALE))
            .transpose()?;
        Ok(TokenMixer::Gated(GatingUnit { gate, tiny }))
    }

    /// `context` is the normalized block input, used only by tiny attention.
    pub fn forward(&self, x: &Tensor, context: &Tensor) -> Result<(Tensor, MixerCache)> {
        if x.rank() != 2 {
            return Err(Error::Rank {
                op: "token mixer",
                expected: 2,
                shape: x.shape().to_vec(),
            });
        }
        match self {
            TokenMixer::Gated(unit) => {
                let half = x.rows() / 2;
                if half == 0 || x.rows() % 2 != 0 {
                    return Err(Error::invalid(format!(
                        "gating unit needs an even channel count, got {}",
                        x.rows()
                    )));
                }
                let residual = x.slice_rows(0, half)?;
                let xg = x.slice_rows(half, x.rows())?;
                let (mut h, gate_cache) = unit.gate.forward(&xg)?;
                if h.rows() != half {
                    return Err(Error::Shape {
                        op: "gating unit",
                        left: vec![half, x.cols()],
                        right: h.shape().to_vec(),
                    });
                }
                let tiny = match &unit.tiny {
                    Some(att) => {
                        let (t, c) = att.forward(context, context.cols())?;
                        h.add_assign(&t)?;
                        Some(c)
                    }
                    None => None,
                };
                let y = residual.mul(&h)?;
                Ok((
                    y,
                    MixerCache::Gated {
                        residual,
                        gate_out: h,
                        gate: gate_cache,
                        tiny,
                    },
                ))
            }
            TokenMixer::Filter { filter } => Ok((
                circular_filter(&filter.value, x)?,
                MixerCache::Filter { input: x.clone() },
            )),
            TokenMixer::Fnet => Ok((fnet::fnet_forward(x)?, MixerCache::Fnet)),
            TokenMixer::Attention(att) => {
                let (y, c) = att.forward(x, x.cols())?;
                Ok((y, MixerCache::Attention(c)))
            }
        }
    }

    /// Returns the input gradient and, when tiny attention is present, the
    /// gradient with respect to the context.
    pub fn backward(
        &mut self,
        cache: &MixerCache,
        dy: &Tensor,
    ) -> Result<(Tensor, Option<Tensor>)> {
        match (self, cache) {
            (
                TokenMixer::Gated(unit),
                MixerCache::Gated {
                    residual,
                    gate_out,
                    gate,
                    tiny,
                },
            ) => {
                let d_residual = dy.mul(gate_out)?;
                let dh = dy.mul(residual)?;
                let d_context = match (&mut unit.tiny, tiny) {
                    (Some(att), Some(c)) => Some(att.backward(c, &dh)?),
                    _ => None,
                };
                let dxg = unit.gate.backward(gate, &dh)?;
                Ok((Tensor::concat_rows(&[&d_residual, &dxg])?, d_context))
            }
            (TokenMixer::Filter { filter }, MixerCache::Filter { input }) => {
                let (df, dx) = circular_filter_backward(&filter.value, input, dy)?;
                filter.accumulate(&df)?;
                Ok((dx, None))
            }
            (TokenMixer::Fnet, MixerCache::Fnet) => Ok((fnet::fnet_backward(dy)?, None)),
            (TokenMixer::Attention(att), MixerCache::Attention(c)) => {
                Ok((att.backward(c, dy)?, None))
            }
            _ => Err(Error::invalid("token mixer cache does not match the unit")),
        }
    }
}

impl Params for TokenMixer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        match self {
            TokenMixer::Gated(unit) => {
                unit.gate.visit(&join(prefix, "gate"), f);
                if let Some(t) = &unit.tiny {
                    t.visit(&join(prefix, "tiny"), f);
                }
            }
            TokenMixer::Filter { filter } => f(&join(prefix, "filter"), filter),
            TokenMixer::Fnet => {}
            TokenMixer::Attention(att) => att.visit(&join(prefix, "attn"), f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        match self {
            TokenMixer::Gated(unit) => {
                unit.gate.visit_mut(&join(prefix, "gate"), f);
                if let Some(t) = &mut unit.tiny {
                    t.visit_mut(&join(prefix, "tiny"), f);
                }
            }
            TokenMixer::Filter { filter } => f(&join(prefix, "filter"), filter),
            TokenMixer::Fnet => {}
            TokenMixer::Attention(att) => att.visit_mut(&join(prefix, "attn"), f),
        }
    }
}

#[cfg(test)]
mod tests;
