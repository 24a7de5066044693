//! Reference multi-head scaled dot-product self-attention with cost accounting.
//!
//! A batch runs in stages so that the live intermediate buffers are known
//! exactly: Q/K/V and the head-concat buffer for every item, then all score
//! matrices (`heads x L x L` per item), then the output projection. The
//! [`CostReport`] filled by the executing path is checked against the closed
//! form in [`cost_of`].

use std::ops::AddAssign;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tokens::TokenSet;

/// Query/key/value/output projections (`C x C`, row-major, applied as `x * W`).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    channels: usize,
    heads: usize,
    wq: Vec<T>,
    wk: Vec<T>,
    wv: Vec<T>,
    wo: Vec<T>,
}

impl<T: Scalar> AttentionWeights<T> {
    /// Entries uniform in `[-1, 1) / sqrt(C)`, drawn wq, wk, wv, wo in turn.
    pub fn seeded(channels: usize, heads: usize, seed: u64) -> Result<Self> {
        check_heads(channels, heads)?;
        let mut rng = SeededRng::new(seed);
        let scale = 1.0 / (channels as f64).sqrt();
        let mut draw = || -> Vec<T> {
            (0..channels * channels)
                .map(|_| T::lit(rng.uniform(-1.0, 1.0) * scale))
                .collect()
        };
        let (wq, wk, wv, wo) = (draw(), draw(), draw(), draw());
        Ok(Self {
            channels,
            heads,
            wq,
            wk,
            wv,
            wo,
        })
    }

    pub fn from_parts(channels: usize, heads: usize, wq: Vec<T>, wk: Vec<T>, wv: Vec<T>, wo: Vec<T>) -> Result<Self> {
        check_heads(channels, heads)?;
        for w in [&wq, &wk, &wv, &wo] {
            if w.len() != channels * channels {
                return Err(Error::Dimension {
                    expected: channels * channels,
                    actual: w.len(),
                });
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input("attention weights must be finite".into()));
            }
        }
        Ok(Self {
            channels,
            heads,
            wq,
            wk,
            wv,
            wo,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn wq(&self) -> &[T] {
        &self.wq
    }

    pub fn wk(&self) -> &[T] {
        &self.wk
    }

    pub fn wv(&self) -> &[T] {
        &self.wv
    }

    pub fn wo(&self) -> &[T] {
        &self.wo
    }
}

fn check_heads(channels: usize, heads: usize) -> Result<()> {
    if channels == 0 || heads == 0 || channels % heads != 0 {
        return Err(Error::Parameter(format!(
            "head count {heads} must be >= 1 and divide channels {channels}"
        )));
    }
    Ok(())
}

/// Attention cost: score-matrix elements, multiply-accumulates and peak live intermediate elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostReport {
    pub score_entries: u64,
    pub macs: u64,
    pub peak_buffer: u64,
}

impl CostReport {
    /// Folds in a later, sequential call: counts add, peaks take the maximum.
    pub fn absorb(&mut self, other: &CostReport) {
        self.score_entries += other.score_entries;
        self.macs += other.macs;
        self.peak_buffer = self.peak_buffer.max(other.peak_buffer);
    }
}

impl AddAssign for CostReport {
    fn add_assign(&mut self, rhs: Self) {
        self.absorb(&rhs);
    }
}

/// Closed-form cost of one batch of attention calls with the given sequence lengths.
pub fn cost_of(lengths: &[usize], channels: usize, heads: usize) -> CostReport {
    let c = channels as u64;
    let h = heads as u64;
    let sum_l: u64 = lengths.iter().map(|&l| l as u64).sum();
    let sum_l2: u64 = lengths.iter().map(|&l| (l as u64) * (l as u64)).sum();
    CostReport {
        score_entries: h * sum_l2,
        // Q, K, V and output projections plus QK^T and PV.
        macs: 4 * sum_l * c * c + 2 * sum_l2 * c,
        // Q, K, V, concat and all score matrices are live together.
        peak_buffer: 4 * sum_l * c + h * sum_l2,
    }
}

#[derive(Default)]
struct Tracker {
    live: u64,
    report: CostReport,
}

impl Tracker {
    fn alloc(&mut self, n: usize) {
        self.live += n as u64;
        self.report.peak_buffer = self.report.peak_buffer.max(self.live);
    }

    fn free(&mut self, n: usize) {
        self.live -= n as u64;
    }
}

fn project<T: Scalar>(x: &[T], w: &[T], c: usize, tracker: &mut Tracker) -> Vec<T> {
    let rows = x.len() / c;
    tracker.report.macs += (rows * c * c) as u64;
    tracker.alloc(rows * c);
    let mut out = vec![T::zero(); rows * c];
    out.par_chunks_mut(c)
        .zip(x.par_chunks(c))
        .for_each_init(|| vec![0.0f64; c], |acc, (o, xi)| {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (i, &xv) in xi.iter().enumerate() {
                let xv = xv.as_f64();
                for (a, wv) in acc.iter_mut().zip(&w[i * c..(i + 1) * c]) {
                    *a += xv * wv.as_f64();
                }
            }
            for (o, &a) in o.iter_mut().zip(acc.iter()) {
                *o = T::lit(a);
            }
        });
    out
}

/// Numerically stable softmax over one row (max subtraction, `f64` denominator).
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let mut buf = Vec::with_capacity(row.len());
    softmax_f64(row.iter().map(|v| v.as_f64()), &mut buf);
    for (r, &p) in row.iter_mut().zip(&buf) {
        *r = T::lit(p);
    }
}

fn softmax_f64(logits: impl Iterator<Item = f64>, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend(logits);
    let max = buf.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0f64;
    // libm rather than the platform exp keeps outputs identical across machines.
    for v in buf.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in buf.iter_mut() {
        *v /= sum;
    }
}

fn all_finite<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Q/K/V of one item, head-major (`[head][token][d]`). Values are rounded to
/// `T` and widened, so the arithmetic matches storing them as `T`.
struct Projected {
    len: usize,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
}

fn split_heads<T: Scalar>(flat: &[T], len: usize, heads: usize) -> Vec<f64> {
    let c = flat.len() / len;
    let d = c / heads;
    let mut out = Vec::with_capacity(flat.len());
    for head in 0..heads {
        for j in 0..len {
            out.extend(flat[j * c + head * d..j * c + (head + 1) * d].iter().map(|v| v.as_f64()));
        }
    }
    out
}

/// `heads x L x L` softmax-normalised scores for one item.
fn probabilities<T: Scalar>(p: &Projected, w: &AttentionWeights<T>, tracker: &mut Tracker) -> Result<Vec<T>> {
    let (l, h, d) = (p.len, w.heads, w.head_dim());
    let scale = 1.0 / (d as f64).sqrt();
    tracker.alloc(h * l * l);
    tracker.report.score_entries += (h * l * l) as u64;
    tracker.report.macs += (h * l * l * d) as u64;
    let mut scores = vec![T::zero(); h * l * l];
    scores
        .par_chunks_mut(l)
        .enumerate()
        .for_each_init(|| Vec::with_capacity(l), |buf, (row, out)| {
            let (head, i) = (row / l, row % l);
            let qi = &p.q[(head * l + i) * d..(head * l + i + 1) * d];
            let keys = &p.k[head * l * d..(head + 1) * l * d];
            let logits = keys.chunks_exact(d).map(|kj| {
                let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                dot * scale
            });
            softmax_f64(logits, buf);
            for (o, &v) in out.iter_mut().zip(buf.iter()) {
                *o = T::lit(v);
            }
        });
    if !all_finite(&scores) {
        return Err(Error::NonFinite { stage: "attention softmax" });
    }
    Ok(scores)
}

/// Self-attention over several independent token sequences processed as one batch.
///
/// When `cost` is given, the work actually performed is added to it (peak is
/// the maximum across calls).
pub fn self_attention_batch<T: Scalar>(
    items: &[&TokenSet<T>],
    weights: &AttentionWeights<T>,
    cost: Option<&mut CostReport>,
) -> Result<Vec<TokenSet<T>>> {
    let c = weights.channels;
    let (h, d) = (weights.heads, weights.head_dim());
    for item in items {
        if item.is_empty() {
            return Err(Error::EmptySet("attention input"));
        }
        if item.channels() != c {
            return Err(Error::Dimension {
                expected: c,
                actual: item.channels(),
            });
        }
    }
    let mut tracker = Tracker::default();

    let mut projected = Vec::with_capacity(items.len());
    for item in items {
        let (x, l) = (item.as_slice(), item.len());
        let q = project(x, &weights.wq, c, &mut tracker);
        let k = project(x, &weights.wk, c, &mut tracker);
        let v = project(x, &weights.wv, c, &mut tracker);
        if !(all_finite(&q) && all_finite(&k) && all_finite(&v)) {
            return Err(Error::NonFinite { stage: "qkv projection" });
        }
        projected.push(Projected {
            len: l,
            q: split_heads(&q, l, h),
            k: split_heads(&k, l, h),
            v: split_heads(&v, l, h),
        });
    }
    let mut concat: Vec<Vec<T>> = projected
        .iter()
        .map(|p| {
            tracker.alloc(p.len * c);
            vec![T::zero(); p.len * c]
        })
        .collect();
    let scores = projected
        .iter()
        .map(|p| probabilities(p, weights, &mut tracker))
        .collect::<Result<Vec<_>>>()?;

    for ((p, probs), ctx) in projected.iter().zip(&scores).zip(concat.iter_mut()) {
        let l = p.len;
        tracker.report.macs += (h * l * l * d) as u64;
        ctx.par_chunks_mut(c)
            .enumerate()
            .for_each_init(|| vec![0.0f64; d], |acc, (i, out)| {
                for head in 0..h {
                    let prow = &probs[(head * l + i) * l..(head * l + i + 1) * l];
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    let values = &p.v[head * l * d..(head + 1) * l * d];
                    for (&pj, vj) in prow.iter().zip(values.chunks_exact(d)) {
                        let pj = pj.as_f64();
                        for (a, vv) in acc.iter_mut().zip(vj) {
                            *a += pj * vv;
                        }
                    }
                    for (o, &a) in out[head * d..(head + 1) * d].iter_mut().zip(acc.iter()) {
                        *o = T::lit(a);
                    }
                }
            });
    }
    for (p, s) in projected.iter().zip(&scores) {
        tracker.free(s.len());
        tracker.free(3 * p.len * c);
    }
    drop(scores);
    drop(projected);

    let mut outputs = Vec::with_capacity(items.len());
    for ctx in concat {
        let out = project(&ctx, &weights.wo, c, &mut tracker);
        tracker.free(ctx.len());
        if !all_finite(&out) {
            return Err(Error::NonFinite { stage: "output projection" });
        }
        outputs.push(TokenSet::from_raw(c, out));
    }
    if let Some(cost) = cost {
        cost.absorb(&tracker.report);
    }
    Ok(outputs)
}

/// Self-attention over a single token sequence.
pub fn self_attention<T: Scalar>(
    tokens: &TokenSet<T>,
    weights: &AttentionWeights<T>,
    cost: Option<&mut CostReport>,
) -> Result<TokenSet<T>> {
    Ok(self_attention_batch(&[tokens], weights, cost)?.remove(0))
}

/// The `heads x L x L` attention probabilities for `tokens`.
pub fn attention_probabilities<T: Scalar>(tokens: &TokenSet<T>, weights: &AttentionWeights<T>) -> Result<Vec<T>> {
    if tokens.is_empty() {
        return Err(Error::EmptySet("attention input"));
    }
    let c = weights.channels;
    let mut tracker = Tracker::default();
    let (x, l, h) = (tokens.as_slice(), tokens.len(), weights.heads);
    let p = Projected {
        len: l,
        q: split_heads(&project(x, &weights.wq, c, &mut tracker), l, h),
        k: split_heads(&project(x, &weights.wk, c, &mut tracker), l, h),
        v: Vec::new(),
    };
    probabilities(&p, weights, &mut tracker)
}
