use crate::error::{Error, Result};
use crate::nn::{join, softmax_rows, Linear, Parameter, Params};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Multi-head scaled dot-product self-attention over tokens.
///
/// Queries, keys and values are projected from `d_in` to `d_attn` channels,
/// split into heads, and the concatenated head outputs are projected to
/// `d_out`. Keys at positions `≥ valid_len` are masked out.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    heads: usize,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Attention weights per head, `[N × N]`, rows are queries.
    weights: Vec<Tensor>,
    context: Tensor,
}

impl MultiHeadAttention {
    pub fn new(
        rng: &mut Rng,
        d_in: usize,
        d_attn: usize,
        heads: usize,
        d_out: usize,
        out_scale: f64,
    ) -> Result<Self> {
        if heads == 0 || d_attn % heads != 0 {
            return Err(Error::invalid(format!(
                "attention width {d_attn} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            query: Linear::new(rng, d_in, d_attn, 1.0),
            key: Linear::new(rng, d_in, d_attn, 1.0),
            value: Linear::new(rng, d_in, d_attn, 1.0),
            output: Linear::new(rng, d_attn, d_out, out_scale),
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn d_attn(&self) -> usize {
        self.query.d_out()
    }

    fn head_dim(&self) -> usize {
        self.d_attn() / self.heads
    }

    pub fn forward(&self, x: &Tensor, valid_len: usize) -> Result<(Tensor, AttentionCache)> {
        let n = x.cols();
        if valid_len > n {
            return Err(Error::invalid(format!(
                "attention mask length {valid_len} exceeds {n} tokens"
            )));
        }
        if valid_len == 0 {
            return Err(Error::invalid("attention mask leaves no valid key"));
        }
        let (q, _) = self.query.forward(x)?;
        let (k, _) = self.key.forward(x)?;
        let (v, _) = self.value.forward(x)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut context = Tensor::zeros(&[self.d_attn(), n]);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let rows = h * dh..(h + 1) * dh;
            let (qh, kh, vh) = (
                q.slice_rows(rows.start, rows.end)?,
                k.slice_rows(rows.start, rows.end)?,
                v.slice_rows(rows.start, rows.end)?,
            );
            let mut logits = qh.matmul_tn(&kh)?.scale(scale);
            for i in 0..n {
                for j in valid_len..n {
                    logits.set(i, j, f64::NEG_INFINITY);
                }
            }
            let a = softmax_rows(&logits);
            // context[:, i] = Σⱼ A[i, j]·V[:, j]
            let ctx = vh.matmul_nt(&a)?;
            for (r, row) in rows.clone().enumerate() {
                context.row_mut(row).copy_from_slice(ctx.row(r));
            }
            weights.push(a);
        }
        let (y, _) = self.output.forward(&context)?;
        Ok((
            y,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                weights,
                context,
            },
        ))
    }

    pub fn backward(&mut self, cache: &AttentionCache, dy: &Tensor) -> Result<Tensor> {
        let d_context = self.output.backward(&cache.context, dy)?;
        let n = cache.x.cols();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor::zeros(cache.q.shape());
        let mut dk = Tensor::zeros(cache.k.shape());
        let mut dv = Tensor::zeros(cache.v.shape());
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = cache.q.slice_rows(lo, hi)?;
            let kh = cache.k.slice_rows(lo, hi)?;
            let vh = cache.v.slice_rows(lo, hi)?;
            let a = &cache.weights[h];
            let dctx = d_context.slice_rows(lo, hi)?;
            // dV[:, j] = Σᵢ dctx[:, i]·A[i, j]
            let dvh = dctx.matmul(a)?;
            // dA[i, j] = dctx[:, i]·V[:, j]
            let da = dctx.matmul_tn(&vh)?;
            let mut ds = Tensor::zeros(&[n, n]);
            for i in 0..n {
                let dot: f64 = (0..n).map(|j| da.at(i, j) * a.at(i, j)).sum();
                for j in 0..n {
                    ds.set(i, j, a.at(i, j) * (da.at(i, j) - dot) * scale);
                }
            }
            // dQ[:, i] = Σⱼ dS[i, j]·K[:, j];  dK[:, j] = Σᵢ dS[i, j]·Q[:, i]
            let dqh = kh.matmul_nt(&ds)?;
            let dkh = qh.matmul(&ds)?;
            for r in 0..dh {
                dq.row_mut(lo + r).copy_from_slice(dqh.row(r));
                dk.row_mut(lo + r).copy_from_slice(dkh.row(r));
                dv.row_mut(lo + r).copy_from_slice(dvh.row(r));
            }
        }
        let mut dx = self.query.backward(&cache.x, &dq)?;
        dx.add_assign(&self.key.backward(&cache.x, &dk)?)?;
        dx.add_assign(&self.value.backward(&cache.x, &dv)?)?;
        Ok(dx)
    }
}

impl Params for MultiHeadAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}
