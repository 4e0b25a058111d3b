//! Connectionist temporal classification: loss, gradient, decoding and the
//! edit-distance metric. Label 0 is the blank.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BLANK: usize = 0;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Loss and flag for a single instance.
#[derive(Clone, Debug, PartialEq)]
pub struct CtcLoss {
    pub value: f64,
    /// `false` when no alignment of the frames can produce the target.
    pub feasible: bool,
}

/// Minimum number of frames that can emit `target`: one per label plus a
/// blank between each pair of equal neighbours.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check(logprobs: &Tensor, target: &[usize]) -> Result<()> {
    if logprobs.rank() != 2 {
        return Err(Error::Rank {
            op: "ctc",
            expected: 2,
            shape: logprobs.shape().to_vec(),
        });
    }
    let vocab = logprobs.rows();
    if let Some(&bad) = target.iter().find(|&&l| l == BLANK || l >= vocab) {
        return Err(Error::invalid(format!(
            "ctc target label {bad} outside 1..{vocab}"
        )));
    }
    Ok(())
}

/// Blank-interleaved target `−,y₁,−,y₂,…,−`.
fn extend(target: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &l in target {
        ext.push(l);
        ext.push(BLANK);
    }
    ext
}

fn can_skip(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

/// Log forward variables `α[t][s]`.
fn alphas(logprobs: &Tensor, ext: &[usize]) -> Vec<Vec<f64>> {
    let t_len = logprobs.cols();
    let s_len = ext.len();
    let mut alpha = vec![vec![f64::NEG_INFINITY; s_len]; t_len];
    alpha[0][0] = logprobs.at(ext[0], 0);
    if s_len > 1 {
        alpha[0][1] = logprobs.at(ext[1], 0);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[t - 1][s];
            if s >= 1 {
                a = log_add(a, alpha[t - 1][s - 1]);
            }
            if can_skip(ext, s) {
                a = log_add(a, alpha[t - 1][s - 2]);
            }
            if a > f64::NEG_INFINITY {
                alpha[t][s] = a + logprobs.at(ext[s], t);
            }
        }
    }
    alpha
}

/// Log backward variables `β[t][s]`, including the emission at `t`.
fn betas(logprobs: &Tensor, ext: &[usize]) -> Vec<Vec<f64>> {
    let t_len = logprobs.cols();
    let s_len = ext.len();
    let mut beta = vec![vec![f64::NEG_INFINITY; s_len]; t_len];
    let last = t_len - 1;
    beta[last][s_len - 1] = logprobs.at(ext[s_len - 1], last);
    if s_len > 1 {
        beta[last][s_len - 2] = logprobs.at(ext[s_len - 2], last);
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let mut b = beta[t + 1][s];
            if s + 1 < s_len {
                b = log_add(b, beta[t + 1][s + 1]);
            }
            if s + 2 < s_len && can_skip(ext, s + 2) {
                b = log_add(b, beta[t + 1][s + 2]);
            }
            if b > f64::NEG_INFINITY {
                beta[t][s] = b + logprobs.at(ext[s], t);
            }
        }
    }
    beta
}

fn total(alpha: &[Vec<f64>]) -> f64 {
    let last = alpha.last().expect("at least one frame");
    let s = last.len();
    if s == 1 {
        last[0]
    } else {
        log_add(last[s - 1], last[s - 2])
    }
}

/// Negative log-likelihood of `target` under per-frame `logprobs [vocab × T]`.
pub fn ctc_loss(logprobs: &Tensor, target: &[usize]) -> Result<CtcLoss> {
    check(logprobs, target)?;
    if logprobs.cols() == 0 || logprobs.cols() < min_frames(target) {
        return Ok(CtcLoss {
            value: f64::INFINITY,
            feasible: false,
        });
    }
    let ext = extend(target);
    let value = -total(&alphas(logprobs, &ext));
    Ok(CtcLoss {
        value,
        feasible: value.is_finite(),
    })
}

/// Posterior label occupancy `γ[v, t]`: probability that frame `t` emits `v`
/// given the target.
pub fn occupancy(logprobs: &Tensor, target: &[usize]) -> Result<Tensor> {
    check(logprobs, target)?;
    if logprobs.cols() == 0 || logprobs.cols() < min_frames(target) {
        return Err(Error::invalid("ctc occupancy of an infeasible target"));
    }
    let ext = extend(target);
    let alpha = alphas(logprobs, &ext);
    let beta = betas(logprobs, &ext);
    let log_z = total(&alpha);
    if !log_z.is_finite() {
        return Err(Error::NonFinite("ctc likelihood"));
    }
    let mut gamma = Tensor::zeros(logprobs.shape());
    for t in 0..logprobs.cols() {
        let mut acc = vec![f64::NEG_INFINITY; logprobs.rows()];
        for (s, &label) in ext.iter().enumerate() {
            // α and β both include the emission at t
            let v = alpha[t][s] + beta[t][s] - logprobs.at(label, t);
            acc[label] = log_add(acc[label], v);
        }
        for (v, a) in acc.into_iter().enumerate() {
            gamma.set(v, t, (a - log_z).exp());
        }
    }
    Ok(gamma)
}

/// Gradient of the loss with respect to the logits that produced
/// `logprobs` through a per-column log-softmax: `softmax − γ`.
pub fn ctc_backward(logprobs: &Tensor, target: &[usize]) -> Result<Tensor> {
    let gamma = occupancy(logprobs, target)?;
    let mut grad = logprobs.map(f64::exp);
    for (g, y) in grad.data_mut().iter_mut().zip(gamma.data()) {
        *g -= y;
    }
    Ok(grad)
}

/// Collapse repeats then drop blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Per-frame argmax followed by [`collapse`]. Ties go to the lowest label.
pub fn greedy_decode(logprobs: &Tensor) -> Vec<usize> {
    let path: Vec<usize> = (0..logprobs.cols())
        .map(|t| {
            let mut best = 0;
            for v in 1..logprobs.rows() {
                if logprobs.at(v, t) > logprobs.at(best, t) {
                    best = v;
                }
            }
            best
        })
        .collect();
    collapse(&path)
}

/// Maximum number of alignments [`brute_force_ctc`] will enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 1_000_000;

/// Loss by summing the probability of every alignment that collapses to
/// `target`.
pub fn brute_force_ctc(logprobs: &Tensor, target: &[usize]) -> Result<f64> {
    check(logprobs, target)?;
    let (vocab, t_len) = (logprobs.rows(), logprobs.cols());
    let paths = (0..t_len).try_fold(1usize, |acc, _| acc.checked_mul(vocab));
    match paths {
        Some(p) if p <= BRUTE_FORCE_LIMIT => {}
        _ => {
            return Err(Error::invalid(format!(
                "brute force over {vocab}^{t_len} alignments exceeds {BRUTE_FORCE_LIMIT}"
            )))
        }
    }
    let mut path = vec![0usize; t_len];
    let mut sum = 0.0;
    loop {
        if collapse(&path) == target {
            let lp: f64 = path
                .iter()
                .enumerate()
                .map(|(t, &v)| logprobs.at(v, t))
                .sum();
            sum += lp.exp();
        }
        // odometer increment
        let mut t = 0;
        while t < t_len {
            path[t] += 1;
            if path[t] < vocab {
                break;
            }
            path[t] = 0;
            t += 1;
        }
        if t == t_len {
            break;
        }
    }
    Ok(-sum.ln())
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
