//! Frame-to-chunk partitioning and chunk processing order.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Order in which the chunks of one denoising iteration are processed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OrderPolicy {
    Sequential,
    Random,
    /// A uniformly chosen `floor(fraction * m)` subset of chunk slots is
    /// shuffled among itself; every other chunk stays in place.
    Mixed { fraction: f64 },
}

impl Default for OrderPolicy {
    fn default() -> Self {
        OrderPolicy::Random
    }
}

impl OrderPolicy {
    pub fn validate(&self) -> Result<()> {
        if let OrderPolicy::Mixed { fraction } = *self {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::Parameter(format!("mixed fraction {fraction} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPlan {
    chunks: Vec<Range<usize>>,
    order: Vec<usize>,
    policy: OrderPolicy,
}

impl ChunkPlan {
    pub fn chunks(&self) -> &[Range<usize>] {
        &self.chunks
    }

    /// Chunk indices in the order they are processed.
    pub fn processing_order(&self) -> &[usize] {
        &self.order
    }

    pub fn policy(&self) -> OrderPolicy {
        self.policy
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.chunks.iter().map(|c| c.len()).collect()
    }

    /// Chunks in processing order.
    pub fn ordered(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.order.iter().map(|&i| self.chunks[i].clone())
    }
}

/// Splits `[0, frames)` into chunks of `chunk_size` consecutive frames after
/// a random-length first chunk `b` in `[1, min(chunk_size, frames)]`.
pub fn plan_chunks(frames: usize, chunk_size: usize, policy: OrderPolicy, rng: &mut SeededRng) -> Result<ChunkPlan> {
    if frames == 0 {
        return Err(Error::Input("cannot chunk an empty video".into()));
    }
    if chunk_size == 0 {
        return Err(Error::Parameter("chunk size must be >= 1".into()));
    }
    policy.validate()?;
    let first = 1 + rng.below(chunk_size.min(frames));
    Ok(plan_unchecked(frames, chunk_size, first, policy, rng))
}

/// [`plan_chunks`] with the first-chunk length fixed to `first`, which must
/// lie in `[1, min(chunk_size, frames)]`.
pub fn plan_with_first(
    frames: usize,
    chunk_size: usize,
    first: usize,
    policy: OrderPolicy,
    rng: &mut SeededRng,
) -> Result<ChunkPlan> {
    if first == 0 || first > chunk_size.min(frames) {
        return Err(Error::Parameter(format!(
            "first chunk {first} outside [1, {}]",
            chunk_size.min(frames)
        )));
    }
    policy.validate()?;
    Ok(plan_unchecked(frames, chunk_size, first, policy, rng))
}

fn plan_unchecked(
    frames: usize,
    chunk_size: usize,
    first: usize,
    policy: OrderPolicy,
    rng: &mut SeededRng,
) -> ChunkPlan {
    let mut chunks = vec![0..first];
    let mut start = first;
    while start < frames {
        let end = (start + chunk_size).min(frames);
        chunks.push(start..end);
        start = end;
    }
    let m = chunks.len();
    let mut order: Vec<usize> = (0..m).collect();
    match policy {
        OrderPolicy::Sequential => {}
        OrderPolicy::Random => rng.shuffle(&mut order),
        OrderPolicy::Mixed { fraction } => {
            let k = (fraction * m as f64).floor() as usize;
            // Partial Fisher-Yates picks a uniform k-subset of slots.
            let mut slots: Vec<usize> = (0..m).collect();
            for i in 0..k {
                let j = i + rng.below(m - i);
                slots.swap(i, j);
            }
            let mut chosen = slots[..k].to_vec();
            chosen.sort_unstable();
            let mut values = chosen.clone();
            rng.shuffle(&mut values);
            for (slot, v) in chosen.into_iter().zip(values) {
                order[slot] = v;
            }
        }
    }
    ChunkPlan { chunks, order, policy }
}

/// Empirical counts of the first-chunk length over repeated plans.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstChunkHistogram {
    /// `counts[b - 1]` is the number of plans whose first chunk had length `b`.
    pub counts: Vec<usize>,
    pub trials: usize,
}

impl FirstChunkHistogram {
    pub fn frequency(&self, b: usize) -> f64 {
        match b.checked_sub(1).and_then(|i| self.counts.get(i)) {
            Some(&c) => c as f64 / self.trials as f64,
            None => 0.0,
        }
    }
}

pub fn first_chunk_distribution(
    frames: usize,
    chunk_size: usize,
    trials: usize,
    rng: &mut SeededRng,
) -> Result<FirstChunkHistogram> {
    if trials == 0 {
        return Err(Error::Parameter("trials must be >= 1".into()));
    }
    let mut counts = vec![0usize; chunk_size.max(1)];
    for _ in 0..trials {
        let plan = plan_chunks(frames, chunk_size, OrderPolicy::Sequential, rng)?;
        counts[plan.chunks()[0].len() - 1] += 1;
    }
    Ok(FirstChunkHistogram { counts, trials })
}
