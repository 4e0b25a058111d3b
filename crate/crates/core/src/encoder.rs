//! Encoder stack: front end, mixing blocks, final norm and vocabulary head.

use crate::error::{Error, Result};
use crate::mixing::{MixerCache, MixerKind, TokenMixer, TokenMixerConfig};
use crate::nn::{
    gelu, gelu_backward, join, log_softmax_columns, Dropout, LayerNorm, LayerNormCache, Linear,
    Parameter, Params, StridedConv1d,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Model channels `D`.
    pub d_model: usize,
    /// Expanded channels `D′`.
    pub d_expanded: usize,
    pub layers: usize,
    pub mixer: TokenMixerConfig,
    /// Label count including the blank.
    pub vocab: usize,
    pub feature_dim: usize,
    /// Two stride-2 convolutions in front of the stack.
    pub subsample: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            d_expanded: 1024,
            layers: 18,
            mixer: TokenMixerConfig::default(),
            vocab: 32,
            feature_dim: 80,
            subsample: true,
        }
    }
}

impl EncoderConfig {
    /// Width after the token mixer, `D″`. Gated units halve `D′`; the other
    /// kinds keep it (for FNet and self-attention it is the feed-forward width).
    pub fn d_post(&self) -> usize {
        if self.mixer.kind.in_gated_block() {
            self.mixer.output_dim(self.d_expanded)
        } else {
            self.d_expanded
        }
    }

    pub fn validate(&self) -> Result<()> {
        let zero = [
            ("d_model", self.d_model),
            ("d_expanded", self.d_expanded),
            ("layers", self.layers),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in zero {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.vocab < 2 {
            return Err(Error::invalid("vocab must include the blank and one label"));
        }
        let mixer_width = if self.mixer.kind.in_gated_block() {
            self.d_expanded
        } else {
            self.d_model
        };
        self.mixer.validate(mixer_width)
    }

    /// Token count after the front end.
    pub fn output_len(&self, n: usize) -> usize {
        if self.subsample {
            StridedConv1d::output_len(StridedConv1d::output_len(n))
        } else {
            n
        }
    }
}

/// Variable-length sequences with their label targets.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    /// One `[feature_dim × N_i]` tensor per item.
    pub features: Vec<Tensor>,
    pub targets: Vec<Vec<usize>>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.cols()).collect()
    }
}

fn apply_mask(y: Tensor, mask: &Option<Tensor>) -> Result<Tensor> {
    match mask {
        Some(m) => y.mul(m),
        None => Ok(y),
    }
}

fn draw_mask(dropout: &mut Option<&mut Dropout>, shape: &[usize]) -> Option<Tensor> {
    dropout.as_mut().and_then(|d| d.mask(shape))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    /// `x + W₃·mixer(GELU(W₁·LN(x)))`.
    Gated {
        norm: LayerNorm,
        expand: Linear,
        mixer: TokenMixer,
        contract: Linear,
    },
    /// Mixer sublayer followed by a feed-forward sublayer, each pre-normed
    /// with its own residual.
    Sandwich {
        norm_mix: LayerNorm,
        mixer: TokenMixer,
        norm_ffn: LayerNorm,
        expand: Linear,
        contract: Linear,
    },
}

#[derive(Clone, Debug)]
pub enum BlockCache {
    Gated {
        norm: LayerNormCache,
        normed: Tensor,
        pre_act: Tensor,
        mixer: MixerCache,
        mixed: Tensor,
        mask: Option<Tensor>,
    },
    Sandwich {
        norm_mix: LayerNormCache,
        mixer: MixerCache,
        mask_mix: Option<Tensor>,
        norm_ffn: LayerNormCache,
        normed: Tensor,
        pre_act: Tensor,
        hidden: Tensor,
        mask_ffn: Option<Tensor>,
    },
}

impl Block {
    pub fn new(cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        let (d, dx) = (cfg.d_model, cfg.d_expanded);
        if cfg.mixer.kind.in_gated_block() {
            Ok(Block::Gated {
                norm: LayerNorm::new(d),
                expand: Linear::new(rng, d, dx, 1.0),
                mixer: TokenMixer::new(&cfg.mixer, dx, d, rng)?,
                contract: Linear::new(rng, cfg.d_post(), d, 1.0),
            })
        } else {
            Ok(Block::Sandwich {
                norm_mix: LayerNorm::new(d),
                mixer: TokenMixer::new(&cfg.mixer, d, d, rng)?,
                norm_ffn: LayerNorm::new(d),
                expand: Linear::new(rng, d, dx, 1.0),
                contract: Linear::new(rng, dx, d, 1.0),
            })
        }
    }

    pub fn mixer(&self) -> &TokenMixer {
        match self {
            Block::Gated { mixer, .. } | Block::Sandwich { mixer, .. } => mixer,
        }
    }

    pub fn mixer_mut(&mut self) -> &mut TokenMixer {
        match self {
            Block::Gated { mixer, .. } | Block::Sandwich { mixer, .. } => mixer,
        }
    }

    pub fn forward(
        &self,
        x: &Tensor,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<(Tensor, BlockCache)> {
        match self {
            Block::Gated {
                norm,
                expand,
                mixer,
                contract,
            } => {
                let (u, norm_cache) = norm.forward(x)?;
                let (a, _) = expand.forward(&u)?;
                let v = gelu(&a);
                let (h, mixer_cache) = mixer.forward(&v, &u)?;
                let (y, _) = contract.forward(&h)?;
                let mask = draw_mask(&mut dropout, y.shape());
                let out = x.add(&apply_mask(y, &mask)?)?;
                Ok((
                    out,
                    BlockCache::Gated {
                        norm: norm_cache,
                        normed: u,
                        pre_act: a,
                        mixer: mixer_cache,
                        mixed: h,
                        mask,
                    },
                ))
            }
            Block::Sandwich {
                norm_mix,
                mixer,
                norm_ffn,
                expand,
                contract,
            } => {
                let (u, norm_mix_cache) = norm_mix.forward(x)?;
                let (m, mixer_cache) = mixer.forward(&u, &u)?;
                let mask_mix = draw_mask(&mut dropout, m.shape());
                let x1 = x.add(&apply_mask(m, &mask_mix)?)?;
                let (u2, norm_ffn_cache) = norm_ffn.forward(&x1)?;
                let (a, _) = expand.forward(&u2)?;
                let g = gelu(&a);
                let (y, _) = contract.forward(&g)?;
                let mask_ffn = draw_mask(&mut dropout, y.shape());
                let out = x1.add(&apply_mask(y, &mask_ffn)?)?;
                Ok((
                    out,
                    BlockCache::Sandwich {
                        norm_mix: norm_mix_cache,
                        mixer: mixer_cache,
                        mask_mix,
                        norm_ffn: norm_ffn_cache,
                        normed: u2,
                        pre_act: a,
                        hidden: g,
                        mask_ffn,
                    },
                ))
            }
        }
    }

    pub fn backward(&mut self, cache: &BlockCache, dy: &Tensor) -> Result<Tensor> {
        match (self, cache) {
            (
                Block::Gated {
                    norm,
                    expand,
                    mixer,
                    contract,
                },
                BlockCache::Gated {
                    norm: norm_cache,
                    normed,
                    pre_act,
                    mixer: mixer_cache,
                    mixed,
                    mask,
                },
            ) => {
                let dbranch = apply_mask(dy.clone(), mask)?;
                let dh = contract.backward(mixed, &dbranch)?;
                let (dv, d_context) = mixer.backward(mixer_cache, &dh)?;
                let da = gelu_backward(pre_act, &dv);
                let mut du = expand.backward(normed, &da)?;
                if let Some(dc) = d_context {
                    du.add_assign(&dc)?;
                }
                let mut dx = norm.backward(norm_cache, &du)?;
                dx.add_assign(dy)?;
                Ok(dx)
            }
            (
                Block::Sandwich {
                    norm_mix,
                    mixer,
                    norm_ffn,
                    expand,
                    contract,
                },
                BlockCache::Sandwich {
                    norm_mix: norm_mix_cache,
                    mixer: mixer_cache,
                    mask_mix,
                    norm_ffn: norm_ffn_cache,
                    normed,
                    pre_act,
                    hidden,
                    mask_ffn,
                },
            ) => {
                let dbranch = apply_mask(dy.clone(), mask_ffn)?;
                let dg = contract.backward(hidden, &dbranch)?;
                let da = gelu_backward(pre_act, &dg);
                let du2 = expand.backward(normed, &da)?;
                let mut dx1 = norm_ffn.backward(norm_ffn_cache, &du2)?;
                dx1.add_assign(dy)?;
                let dm = apply_mask(dx1.clone(), mask_mix)?;
                let (du, _) = mixer.backward(mixer_cache, &dm)?;
                let mut dx = norm_mix.backward(norm_mix_cache, &du)?;
                dx.add_assign(&dx1)?;
                Ok(dx)
            }
            _ => Err(Error::invalid(
                "block cache does not match the block layout",
            )),
        }
    }
}

impl Params for Block {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        match self {
            Block::Gated {
                norm,
                expand,
                mixer,
                contract,
            } => {
                norm.visit(&join(prefix, "norm"), f);
                expand.visit(&join(prefix, "expand"), f);
                mixer.visit(&join(prefix, "mixer"), f);
                contract.visit(&join(prefix, "contract"), f);
            }
            Block::Sandwich {
                norm_mix,
                mixer,
                norm_ffn,
                expand,
                contract,
            } => {
                norm_mix.visit(&join(prefix, "norm_mix"), f);
                mixer.visit(&join(prefix, "mixer"), f);
                norm_ffn.visit(&join(prefix, "norm_ffn"), f);
                expand.visit(&join(prefix, "expand"), f);
                contract.visit(&join(prefix, "contract"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        match self {
            Block::Gated {
                norm,
                expand,
                mixer,
                contract,
            } => {
                norm.visit_mut(&join(prefix, "norm"), f);
                expand.visit_mut(&join(prefix, "expand"), f);
                mixer.visit_mut(&join(prefix, "mixer"), f);
                contract.visit_mut(&join(prefix, "contract"), f);
            }
            Block::Sandwich {
                norm_mix,
                mixer,
                norm_ffn,
                expand,
                contract,
            } => {
                norm_mix.visit_mut(&join(prefix, "norm_mix"), f);
                mixer.visit_mut(&join(prefix, "mixer"), f);
                norm_ffn.visit_mut(&join(prefix, "norm_ffn"), f);
                expand.visit_mut(&join(prefix, "expand"), f);
                contract.visit_mut(&join(prefix, "contract"), f);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FrontEnd {
    Subsample {
        first: StridedConv1d,
        second: StridedConv1d,
    },
    /// Per-token projection from features to model channels.
    Project(Linear),
}

#[derive(Clone, Debug)]
enum FrontCache {
    Subsample {
        first: (Tensor, usize),
        pre_first: Tensor,
        second: (Tensor, usize),
        pre_second: Tensor,
    },
    Project(Tensor),
}

impl FrontEnd {
    fn forward(&self, x: &Tensor) -> Result<(Tensor, FrontCache)> {
        match self {
            FrontEnd::Subsample { first, second } => {
                let (a1, c1) = first.forward(x)?;
                let h1 = gelu(&a1);
                let (a2, c2) = second.forward(&h1)?;
                Ok((
                    gelu(&a2),
                    FrontCache::Subsample {
                        first: c1,
                        pre_first: a1,
                        second: c2,
                        pre_second: a2,
                    },
                ))
            }
            FrontEnd::Project(proj) => {
                let (y, c) = proj.forward(x)?;
                Ok((y, FrontCache::Project(c)))
            }
        }
    }

    fn backward(&mut self, cache: &FrontCache, dy: &Tensor) -> Result<Tensor> {
        match (self, cache) {
            (
                FrontEnd::Subsample { first, second },
                FrontCache::Subsample {
                    first: c1,
                    pre_first,
                    second: c2,
                    pre_second,
                },
            ) => {
                let da2 = gelu_backward(pre_second, dy);
                let dh1 = second.backward(c2, &da2)?;
                let da1 = gelu_backward(pre_first, &dh1);
                first.backward(c1, &da1)
            }
            (FrontEnd::Project(proj), FrontCache::Project(x)) => proj.backward(x, dy),
            _ => Err(Error::invalid("front-end cache does not match")),
        }
    }
}

impl Params for FrontEnd {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        match self {
            FrontEnd::Subsample { first, second } => {
                first.visit(&join(prefix, "conv1"), f);
                second.visit(&join(prefix, "conv2"), f);
            }
            FrontEnd::Project(p) => p.visit(&join(prefix, "proj"), f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        match self {
            FrontEnd::Subsample { first, second } => {
                first.visit_mut(&join(prefix, "conv1"), f);
                second.visit_mut(&join(prefix, "conv2"), f);
            }
            FrontEnd::Project(p) => p.visit_mut(&join(prefix, "proj"), f),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    cfg: EncoderConfig,
    pub front: FrontEnd,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pub head: Linear,
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    front: FrontCache,
    blocks: Vec<BlockCache>,
    norm: LayerNormCache,
    normed: Tensor,
}

impl Encoder {
    pub fn new(cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let front = if cfg.subsample {
            FrontEnd::Subsample {
                first: StridedConv1d::new(rng, cfg.feature_dim, cfg.d_model),
                second: StridedConv1d::new(rng, cfg.d_model, cfg.d_model),
            }
        } else {
            FrontEnd::Project(Linear::new(rng, cfg.feature_dim, cfg.d_model, 1.0))
        };
        let blocks = (0..cfg.layers)
            .map(|_| Block::new(cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            front,
            blocks,
            norm: LayerNorm::new(cfg.d_model),
            head: Linear::new(rng, cfg.d_model, cfg.vocab, 1.0),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Returns per-token log-probabilities `[vocab × T]`.
    pub fn forward(
        &self,
        features: &Tensor,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<(Tensor, EncoderCache)> {
        if features.rank() != 2 || features.rows() != self.cfg.feature_dim {
            return Err(Error::Shape {
                op: "encoder input",
                left: vec![self.cfg.feature_dim, features.cols()],
                right: features.shape().to_vec(),
            });
        }
        if features.cols() == 0 {
            return Err(Error::Empty("encoder input"));
        }
        let (mut x, front) = self.front.forward(features)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward(&x, dropout.as_deref_mut())?;
            blocks.push(c);
            x = y;
        }
        let (u, norm) = self.norm.forward(&x)?;
        let (logits, _) = self.head.forward(&u)?;
        Ok((
            log_softmax_columns(&logits),
            EncoderCache {
                front,
                blocks,
                norm,
                normed: u,
            },
        ))
    }

    /// Backpropagates a gradient with respect to the pre-softmax logits and
    /// accumulates parameter gradients. Returns the feature gradient.
    pub fn backward(&mut self, cache: &EncoderCache, d_logits: &Tensor) -> Result<Tensor> {
        let du = self.head.backward(&cache.normed, d_logits)?;
        let mut dx = self.norm.backward(&cache.norm, &du)?;
        for (block, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            dx = block.backward(c, &dx)?;
        }
        self.front.backward(&cache.front, &dx)
    }

    /// Log-probabilities for every item of a batch, without caches.
    pub fn log_probs(&self, batch: &SequenceBatch) -> Result<Vec<Tensor>> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        batch
            .features
            .iter()
            .map(|f| Ok(self.forward(f, None)?.0))
            .collect()
    }
}

impl Params for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        self.front.visit(&join(prefix, "front"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.norm.visit(&join(prefix, "norm"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        self.front.visit_mut(&join(prefix, "front"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Learnable scalars in the token mixer of one block.
pub fn mixer_parameters(cfg: &EncoderConfig) -> usize {
    let m = &cfg.mixer;
    let d = cfg.d_model;
    let half = cfg.d_expanded / 2;
    let linear = |i: usize, o: usize| i * o + o;
    let gate = match m.kind {
        MixerKind::Sgu => m.n_max * m.n_max + m.n_max,
        MixerKind::Fgu if !m.gated => m.filter_len * cfg.d_expanded,
        MixerKind::Fgu => m.filter_len * half + half,
        MixerKind::Cgu => m.kernel_size * half + half,
        MixerKind::CguPrime => m.kernel_size * half + half + linear(half, half),
        MixerKind::Tsgu | MixerKind::Fnet => 0,
        MixerKind::SelfAttention => 3 * linear(d, m.attn_dim) + linear(m.attn_dim, d),
    };
    let tiny = match (&m.tiny_attention, m.kind.in_gated_block() && m.is_gated()) {
        (Some(t), true) => 3 * linear(d, t.dim) + linear(t.dim, half),
        _ => 0,
    };
    gate + tiny
}

/// Learnable scalars in one block.
pub fn block_parameters(cfg: &EncoderConfig) -> usize {
    let (d, dx) = (cfg.d_model, cfg.d_expanded);
    let linear = |i: usize, o: usize| i * o + o;
    let mixer = mixer_parameters(cfg);
    if cfg.mixer.kind.in_gated_block() {
        2 * d + linear(d, dx) + mixer + linear(cfg.d_post(), d)
    } else {
        4 * d + mixer + linear(d, dx) + linear(dx, d)
    }
}

/// Exact learnable scalar count of the assembled model, from the config alone.
pub fn count_parameters(cfg: &EncoderConfig) -> usize {
    let d = cfg.d_model;
    let linear = |i: usize, o: usize| i * o + o;
    let front = if cfg.subsample {
        (cfg.feature_dim * 3 * d + d) + (d * 3 * d + d)
    } else {
        linear(cfg.feature_dim, d)
    };
    front + cfg.layers * block_parameters(cfg) + 2 * d + linear(d, cfg.vocab)
}
