//! Cross-frame token merging around a self-attention site.
//!
//! Within a chunk of `B` frames, every non-target frame is merged into one
//! randomly chosen target frame (local merging). The locally merged tokens
//! are then merged with a set of global tokens carried across the chunks of
//! one denoising iteration (global merging). Attention runs on the result,
//! and a two-stage unmerge restores `B x N` tokens.

use serde::{Deserialize, Serialize};

use crate::attention::{self_attention, AttentionWeights, CostReport};
use crate::error::{Error, Result};
use crate::matching::{best_candidates, bipartite_match, keep_strongest, MatchMap};
use crate::merge::{merge_tokens, unmerge_tokens, MergeLayout, MergeMode};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tokens::{TokenMatrix, TokenSet};

/// Absolute merge budget for a ratio over `n` candidates, floored.
///
/// A `1e-9` slack absorbs binary representation error, e.g. `0.29 * 100`.
pub fn merge_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Attention input sizes for full chunks of `b` frames with `n` tokens each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergedCounts {
    /// After local merging alone, as for the first chunk of an iteration.
    pub local: usize,
    /// After global merging against a global set carried from a previous
    /// full chunk (which holds `local` tokens), as for every later chunk.
    pub steady: usize,
}

pub fn merged_counts(b: usize, n: usize, cfg: &VidToMeConfig) -> MergedCounts {
    let local = b * n - merge_count(cfg.local_ratio, b.saturating_sub(1) * n);
    let steady = if cfg.global_merging {
        2 * local - merge_count(cfg.global_ratio, local)
    } else {
        local
    };
    MergedCounts { local, steady }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VidToMeConfig {
    pub chunk_size: usize,
    pub local_ratio: f64,
    pub global_ratio: f64,
    /// Probability that global tokens are the src side (merged into the local tokens).
    pub merge_to_local_probability: f64,
    pub merge_mode: MergeMode,
    pub global_merging: bool,
    pub seed: u64,
}

impl Default for VidToMeConfig {
    fn default() -> Self {
        Self {
            chunk_size: 4,
            local_ratio: 0.9,
            global_ratio: 0.8,
            merge_to_local_probability: 0.5,
            merge_mode: MergeMode::Replace,
            global_merging: true,
            seed: 0,
        }
    }
}

impl VidToMeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::Parameter("chunk_size must be >= 1".into()));
        }
        for (name, v) in [
            ("local_ratio", self.local_ratio),
            ("global_ratio", self.global_ratio),
            ("merge_to_local_probability", self.merge_to_local_probability),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parameter(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// False when both merge stages are switched off; sites then attend per frame.
    pub fn merging_active(&self) -> bool {
        self.local_ratio > 0.0 || (self.global_merging && self.global_ratio > 0.0)
    }
}

/// Global tokens carried across the chunks of one denoising iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalTokenState<T> {
    tokens: Option<TokenSet<T>>,
    iteration: usize,
}

impl<T: Scalar> GlobalTokenState<T> {
    pub fn new(iteration: usize) -> Self {
        Self {
            tokens: None,
            iteration,
        }
    }

    pub fn with_tokens(tokens: TokenSet<T>, iteration: usize) -> Self {
        Self {
            tokens: Some(tokens),
            iteration,
        }
    }

    pub fn reset(&mut self, iteration: usize) {
        self.tokens = None;
        self.iteration = iteration;
    }

    pub fn tokens(&self) -> Option<&TokenSet<T>> {
        self.tokens.as_ref()
    }

    pub fn len(&self) -> usize {
        self.tokens.as_ref().map_or(0, |t| t.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }
}

/// Which side of the global merge the local tokens took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalAssignment {
    /// Local tokens are src and merge into the global tokens.
    LocalIntoGlobal,
    /// Global tokens are src and merge into the local tokens.
    GlobalIntoLocal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMerge {
    pub layout: MergeLayout,
    pub assignment: GlobalAssignment,
}

/// Provenance of both merge stages for one chunk at one site.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeRecord {
    pub frames: usize,
    pub tokens_per_frame: usize,
    pub channels: usize,
    pub target_frame: usize,
    pub local: MergeLayout,
    pub global: Option<GlobalMerge>,
}

impl MergeRecord {
    pub fn local_map(&self) -> &MatchMap {
        self.local.map()
    }

    pub fn global_map(&self) -> Option<&MatchMap> {
        self.global.as_ref().map(|g| g.layout.map())
    }

    /// Number of tokens handed to attention.
    pub fn merged_len(&self) -> usize {
        match &self.global {
            Some(g) => g.layout.merged_len(),
            None => self.local.merged_len(),
        }
    }
}

/// Merges all frames of `chunk` into one randomly drawn target frame.
///
/// src is every other frame flattened frame-major, dst is the target frame,
/// and `floor(local_ratio * (B - 1) * N)` edges are merged.
pub fn local_merge<T: Scalar>(
    chunk: &TokenMatrix<T>,
    cfg: &VidToMeConfig,
    rng: &mut SeededRng,
) -> Result<(TokenSet<T>, MergeRecord)> {
    let (b, n, c) = (chunk.frames(), chunk.tokens_per_frame(), chunk.channels());
    let k = rng.below(b);
    let mut src = Vec::with_capacity((b - 1) * n * c);
    for f in (0..b).filter(|&f| f != k) {
        src.extend_from_slice(chunk.frame(f));
    }
    let src = TokenSet::from_raw(c, src);
    let dst = chunk.frame_set(k);
    let r = merge_count(cfg.local_ratio, src.len());
    let map = bipartite_match(&src, &dst, r)?;
    let (tokens, local) = merge_tokens(&src, &dst, &map, cfg.merge_mode)?.into_parts();
    let record = MergeRecord {
        frames: b,
        tokens_per_frame: n,
        channels: c,
        target_frame: k,
        local,
        global: None,
    };
    Ok((tokens, record))
}

/// Merges locally merged tokens with the global tokens and returns the
/// attention input plus the updated global state.
///
/// The first chunk of an iteration initialises the state with its local
/// tokens. Later chunks draw the src/dst assignment, merge
/// `floor(global_ratio * |src|)` edges, unmerge the global stage right away
/// and keep the local half of that unmerge as the new global tokens.
pub fn global_merge<T: Scalar>(
    local: &TokenSet<T>,
    state: &GlobalTokenState<T>,
    cfg: &VidToMeConfig,
    rng: &mut SeededRng,
    record: &mut MergeRecord,
) -> Result<(TokenSet<T>, GlobalTokenState<T>)> {
    record.global = None;
    if !cfg.global_merging {
        return Ok((local.clone(), state.clone()));
    }
    let global = match state.tokens() {
        Some(g) if !g.is_empty() => g,
        _ => {
            return Ok((
                local.clone(),
                GlobalTokenState::with_tokens(local.clone(), state.iteration()),
            ))
        }
    };
    if global.channels() != local.channels() {
        return Err(Error::Consistency(format!(
            "global tokens have {} channels, local tokens {}",
            global.channels(),
            local.channels()
        )));
    }
    let assignment = if rng.next_f64() < cfg.merge_to_local_probability {
        GlobalAssignment::GlobalIntoLocal
    } else {
        GlobalAssignment::LocalIntoGlobal
    };
    let (src, dst) = match assignment {
        GlobalAssignment::LocalIntoGlobal => (local, global),
        GlobalAssignment::GlobalIntoLocal => (global, local),
    };
    let r = merge_count(cfg.global_ratio, src.len());
    let map = bipartite_match(src, dst, r)?;
    let merged = merge_tokens(src, dst, &map, cfg.merge_mode)?;
    let (src_u, dst_u) = unmerge_tokens(&merged)?;
    let local_u = match assignment {
        GlobalAssignment::LocalIntoGlobal => src_u,
        GlobalAssignment::GlobalIntoLocal => dst_u,
    };
    let (tokens, layout) = merged.into_parts();
    record.global = Some(GlobalMerge { layout, assignment });
    Ok((tokens, GlobalTokenState::with_tokens(local_u, state.iteration())))
}

/// Two-stage unmerge of the attention output back to `B x N x C`.
///
/// The global half of the first stage is dropped; global tokens were already
/// updated inside [`global_merge`].
pub fn unmerge_all<T: Scalar>(output: &TokenSet<T>, record: &MergeRecord) -> Result<TokenMatrix<T>> {
    if output.len() != record.merged_len() || output.channels() != record.channels {
        return Err(Error::Consistency(format!(
            "attention output has {} tokens of {} channels, record expects {} of {}",
            output.len(),
            output.channels(),
            record.merged_len(),
            record.channels
        )));
    }
    let local_part = match &record.global {
        Some(g) => {
            let (src, dst) = g.layout.unmerge(output)?;
            match g.assignment {
                GlobalAssignment::LocalIntoGlobal => src,
                GlobalAssignment::GlobalIntoLocal => dst,
            }
        }
        None => output.clone(),
    };
    let (src, dst) = record.local.unmerge(&local_part)?;
    let (b, n, c, k) = (record.frames, record.tokens_per_frame, record.channels, record.target_frame);
    if src.len() != (b - 1) * n || dst.len() != n {
        return Err(Error::Consistency(format!(
            "local unmerge produced {}+{} tokens for {b} frames of {n}",
            src.len(),
            dst.len()
        )));
    }
    let stride = n * c;
    let mut data = Vec::with_capacity(b * stride);
    for f in 0..b {
        if f == k {
            data.extend_from_slice(dst.as_slice());
        } else {
            let s = if f < k { f } else { f - 1 };
            data.extend_from_slice(&src.as_slice()[s * stride..(s + 1) * stride]);
        }
    }
    Ok(TokenMatrix::from_raw(b, n, c, data))
}

/// A single matching map shared by a source and an edit stream.
///
/// Each src token follows whichever stream links it with the larger
/// similarity (ties favour the source stream); the top-`r` cut ranks edges by
/// that winning similarity.
pub fn match_shared<T: Scalar>(
    source: (&TokenSet<T>, &TokenSet<T>),
    edit: (&TokenSet<T>, &TokenSet<T>),
    r: usize,
) -> Result<MatchMap> {
    let ((src_a, dst_a), (src_b, dst_b)) = (source, edit);
    if src_a.len() != src_b.len() || dst_a.len() != dst_b.len() {
        return Err(Error::Consistency(format!(
            "source stream is {}x{}, edit stream {}x{}",
            src_a.len(),
            dst_a.len(),
            src_b.len(),
            dst_b.len()
        )));
    }
    if dst_a.is_empty() {
        return Err(Error::EmptySet("dst"));
    }
    if r > src_a.len() {
        return Err(Error::Parameter(format!(
            "cannot keep {r} edges from {} src tokens",
            src_a.len()
        )));
    }
    if src_a.channels() != dst_a.channels() || src_b.channels() != dst_b.channels() {
        return Err(Error::Dimension {
            expected: src_a.channels(),
            actual: dst_a.channels(),
        });
    }
    let a = best_candidates(src_a, dst_a);
    let b = best_candidates(src_b, dst_b);
    let winners = a
        .into_iter()
        .zip(b)
        .map(|(ea, eb)| if eb.similarity > ea.similarity { eb } else { ea })
        .collect();
    MatchMap::new(keep_strongest(winners, r), src_a.len(), dst_a.len())
}

/// Result of running one attention site over a chunk with token merging.
#[derive(Debug, Clone)]
pub struct SiteOutput<T> {
    pub output: TokenMatrix<T>,
    pub state: GlobalTokenState<T>,
    pub merged_len: usize,
}

/// Local merge, global merge, attention and unmerge for one chunk at one site.
pub fn merged_self_attention<T: Scalar>(
    chunk: &TokenMatrix<T>,
    weights: &AttentionWeights<T>,
    cfg: &VidToMeConfig,
    state: &GlobalTokenState<T>,
    rng: &mut SeededRng,
    cost: Option<&mut CostReport>,
) -> Result<SiteOutput<T>> {
    let (local, mut record) = local_merge(chunk, cfg, rng)?;
    let (merged, state) = global_merge(&local, state, cfg, rng, &mut record)?;
    let attended = self_attention(&merged, weights, cost)?;
    let output = unmerge_all(&attended, &record)?;
    Ok(SiteOutput {
        output,
        state,
        merged_len: merged.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::Edge;

    fn random_matrix(seed: u64, b: usize, n: usize, c: usize) -> TokenMatrix<f32> {
        let mut rng = SeededRng::new(seed);
        TokenMatrix::new(b, n, c, (0..b * n * c).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()).unwrap()
    }

    fn repeated(frame: &TokenSet<f32>, b: usize) -> TokenMatrix<f32> {
        TokenMatrix::from_frames(&vec![frame.clone(); b]).unwrap()
    }

    fn cfg(p_l: f64, p_g: f64) -> VidToMeConfig {
        VidToMeConfig {
            local_ratio: p_l,
            global_ratio: p_g,
            ..VidToMeConfig::default()
        }
    }

    #[test]
    fn merge_count_floors() {
        assert_eq!(merge_count(0.9, 300), 270);
        assert_eq!(merge_count(0.29, 100), 29);
        assert_eq!(merge_count(0.9, 1300), 1170);
        assert_eq!(merge_count(1.0, 7), 7);
        assert_eq!(merge_count(0.0, 7), 0);
        assert_eq!(merge_count(0.5, 3), 1);
    }

    #[test]
    fn config_validation() {
        assert!(VidToMeConfig::default().validate().is_ok());
        assert!(cfg(1.1, 0.5).validate().is_err());
        assert!(cfg(0.5, -0.1).validate().is_err());
        let c = VidToMeConfig {
            chunk_size: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(!cfg(0.0, 0.0).merging_active());
        assert!(cfg(0.0, 0.5).merging_active());
    }

    #[test]
    fn local_count_b4_n1000() {
        let chunk = random_matrix(1, 4, 1000, 2);
        let (merged, record) = local_merge(&chunk, &cfg(0.9, 0.9), &mut SeededRng::new(2)).unwrap();
        assert_eq!(merged.len(), 1300);
        assert_eq!(record.local_map().len(), 2700);
    }

    #[test]
    fn single_frame_chunk_is_passthrough() {
        let chunk = random_matrix(3, 1, 10, 3);
        let (merged, record) = local_merge(&chunk, &VidToMeConfig::default(), &mut SeededRng::new(0)).unwrap();
        assert_eq!(merged.as_slice(), chunk.as_slice());
        assert!(record.local_map().is_empty());
    }

    #[test]
    fn identical_pair_merges_fully() {
        let frame = TokenSet::new(2, vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        let chunk = repeated(&frame, 2);
        let (merged, record) = local_merge(&chunk, &cfg(1.0, 0.0), &mut SeededRng::new(4)).unwrap();
        assert_eq!(merged.len(), 2);
        assert!(record.local_map().similarities().all(|s| s == 1.0));
    }

    #[test]
    fn first_chunk_initialises_state() {
        let chunk = random_matrix(5, 4, 1000, 2);
        let config = cfg(0.9, 0.8);
        let mut rng = SeededRng::new(6);
        let (local, mut record) = local_merge(&chunk, &config, &mut rng).unwrap();
        let (merged, state) = global_merge(&local, &GlobalTokenState::new(0), &config, &mut rng, &mut record).unwrap();
        assert_eq!(merged.len(), 1300);
        assert_eq!(state.len(), 1300);
        assert!(record.global.is_none());
    }

    #[test]
    fn steady_state_count_is_1430() {
        let config = cfg(0.9, 0.9);
        let mut rng = SeededRng::new(8);
        let (first, _) = local_merge(&random_matrix(9, 4, 1000, 2), &config, &mut rng).unwrap();
        let state = GlobalTokenState::with_tokens(first, 0);
        let (local, mut record) = local_merge(&random_matrix(10, 4, 1000, 2), &config, &mut rng).unwrap();
        let (merged, next) = global_merge(&local, &state, &config, &mut rng, &mut record).unwrap();
        assert_eq!(merged.len(), 1430);
        assert_eq!(next.len(), 1300);
        assert_eq!(record.global_map().unwrap().len(), 1170);
        assert_eq!(merged_counts(4, 1000, &config), MergedCounts { local: 1300, steady: 1430 });
    }

    #[test]
    fn duplicate_global_tokens_match_exactly() {
        let config = VidToMeConfig {
            merge_to_local_probability: 1.0,
            ..cfg(0.9, 0.9)
        };
        let local = random_matrix(11, 1, 50, 4).flatten();
        let state = GlobalTokenState::with_tokens(local.clone(), 0);
        let chunk = TokenMatrix::new(1, 50, 4, local.as_slice().to_vec()).unwrap();
        let mut rng = SeededRng::new(12);
        let (l, mut record) = local_merge(&chunk, &config, &mut rng).unwrap();
        global_merge(&l, &state, &config, &mut rng, &mut record).unwrap();
        let g = record.global.as_ref().unwrap();
        assert_eq!(g.assignment, GlobalAssignment::GlobalIntoLocal);
        assert_eq!(g.layout.map().len(), 45);
        assert!(g.layout.map().similarities().all(|s| s == 1.0));
    }

    #[test]
    fn global_update_keeps_dst_values() {
        // Local merged into global: the new global set is the local tokens with
        // merged positions overwritten by their global counterparts.
        let config = VidToMeConfig {
            merge_to_local_probability: 0.0,
            ..cfg(0.0, 1.0)
        };
        let local = TokenSet::new(2, vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        let global = TokenSet::new(2, vec![2.0f32, 0.1, 0.1, 2.0]).unwrap();
        let state = GlobalTokenState::with_tokens(global.clone(), 3);
        let chunk = TokenMatrix::new(1, 2, 2, local.as_slice().to_vec()).unwrap();
        let mut rng = SeededRng::new(0);
        let (l, mut record) = local_merge(&chunk, &config, &mut rng).unwrap();
        let (merged, next) = global_merge(&l, &state, &config, &mut rng, &mut record).unwrap();
        assert_eq!(merged, global);
        assert_eq!(next.tokens().unwrap(), &global);
        assert_eq!(next.iteration(), 3);
    }

    #[test]
    fn global_switch_off_skips_stage() {
        let config = VidToMeConfig {
            global_merging: false,
            ..VidToMeConfig::default()
        };
        let chunk = random_matrix(13, 4, 16, 4);
        let state = GlobalTokenState::with_tokens(random_matrix(14, 1, 20, 4).flatten(), 0);
        let mut rng = SeededRng::new(1);
        let (l, mut record) = local_merge(&chunk, &config, &mut rng).unwrap();
        let (merged, next) = global_merge(&l, &state, &config, &mut rng, &mut record).unwrap();
        assert_eq!(merged, l);
        assert_eq!(next, state);
    }

    #[test]
    fn identity_pipeline_on_identical_frames() {
        let frame = random_matrix(15, 1, 16, 4).flatten();
        let chunk = repeated(&frame, 4);
        let config = VidToMeConfig::default();
        let mut rng = SeededRng::new(16);
        let state = GlobalTokenState::with_tokens(random_matrix(17, 1, 30, 4).flatten(), 0);
        let (l, mut record) = local_merge(&chunk, &config, &mut rng).unwrap();
        let (merged, _) = global_merge(&l, &state, &config, &mut rng, &mut record).unwrap();
        let out = unmerge_all(&merged, &record).unwrap();
        for f in 1..4 {
            assert_eq!(out.frame(0), out.frame(f));
        }
    }

    #[test]
    fn zero_ratios_round_trip_bit_identical() {
        let chunk = random_matrix(18, 4, 16, 4);
        let config = cfg(0.0, 0.0);
        let mut rng = SeededRng::new(19);
        let state = GlobalTokenState::with_tokens(random_matrix(20, 1, 16, 4).flatten(), 0);
        let (l, mut record) = local_merge(&chunk, &config, &mut rng).unwrap();
        let (merged, _) = global_merge(&l, &state, &config, &mut rng, &mut record).unwrap();
        assert_eq!(unmerge_all(&merged, &record).unwrap(), chunk);
    }

    #[test]
    fn full_round_trip_shape() {
        let chunk = random_matrix(7, 4, 16, 8);
        let config = VidToMeConfig::default();
        let weights = AttentionWeights::seeded(8, 1, 3).unwrap();
        let mut rng = SeededRng::new(7);
        let first = merged_self_attention(&chunk, &weights, &config, &GlobalTokenState::new(0), &mut rng, None).unwrap();
        let second = merged_self_attention(&chunk, &weights, &config, &first.state, &mut rng, None).unwrap();
        for out in [&first.output, &second.output] {
            assert_eq!((out.frames(), out.tokens_per_frame(), out.channels()), (4, 16, 8));
        }
    }

    #[test]
    fn unmerge_all_rejects_wrong_length() {
        let chunk = random_matrix(21, 2, 4, 2);
        let (merged, record) = local_merge(&chunk, &VidToMeConfig::default(), &mut SeededRng::new(0)).unwrap();
        let mut longer = merged.clone();
        longer.push(&[0.0, 0.0]);
        assert!(matches!(unmerge_all(&longer, &record), Err(Error::Consistency(_))));
    }

    #[test]
    fn state_size_is_stable_across_equal_chunks() {
        let config = VidToMeConfig::default();
        let weights = AttentionWeights::seeded(4, 1, 3).unwrap();
        let mut rng = SeededRng::new(22);
        let mut state = GlobalTokenState::new(0);
        let mut sizes = Vec::new();
        for seed in 0..6 {
            let out = merged_self_attention(&random_matrix(seed, 4, 32, 4), &weights, &config, &state, &mut rng, None).unwrap();
            state = out.state;
            sizes.push(state.len());
        }
        assert!(sizes.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn deterministic_under_seed() {
        let chunk = random_matrix(23, 4, 16, 4);
        let weights = AttentionWeights::seeded(4, 1, 3).unwrap();
        let run = || {
            let mut rng = SeededRng::new(5);
            let a = merged_self_attention(&chunk, &weights, &VidToMeConfig::default(), &GlobalTokenState::new(0), &mut rng, None).unwrap();
            merged_self_attention(&chunk, &weights, &VidToMeConfig::default(), &a.state, &mut rng, None)
                .unwrap()
                .output
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shared_matching_examples() {
        let src = TokenSet::new(2, vec![1.0f32, 0.0]).unwrap();
        let dst = TokenSet::new(2, vec![1.0f32, 0.1, 0.5, 0.5]).unwrap();
        let plain = bipartite_match(&src, &dst, 1).unwrap();
        assert_eq!(match_shared((&src, &dst), (&src, &dst), 1).unwrap(), plain);
        assert!(match_shared((&src, &dst), (&src, &dst), 0).unwrap().is_empty());

        // Stream A: best edge 0->0 at 0.9. Stream B: best edge 0->1 at 0.95.
        let a_src = TokenSet::new(2, vec![1.0f32, 0.0]).unwrap();
        let a_dst = TokenSet::new(2, vec![0.9, (1.0f32 - 0.81).sqrt(), 0.0, 1.0]).unwrap();
        let b_src = TokenSet::new(2, vec![1.0f32, 0.0]).unwrap();
        let b_dst = TokenSet::new(2, vec![0.0, 1.0, 0.95, (1.0f32 - 0.9025).sqrt()]).unwrap();
        let shared = match_shared((&a_src, &a_dst), (&b_src, &b_dst), 1).unwrap();
        assert_eq!((shared.edges()[0].src, shared.edges()[0].dst), (0, 1));
        assert!((shared.edges()[0].similarity - 0.95).abs() < 1e-6);
    }

    #[test]
    fn shared_matching_errors() {
        let one = TokenSet::new(2, vec![1.0f32, 0.0]).unwrap();
        let two = TokenSet::new(2, vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(match_shared((&one, &one), (&two, &one), 0), Err(Error::Consistency(_))));
        assert!(matches!(match_shared((&one, &one), (&one, &one), 2), Err(Error::Parameter(_))));
    }

    #[test]
    fn shared_reduces_to_dominant_stream() {
        // Stream B is all zeros, so its similarities are 0 everywhere and A dominates.
        let mut rng = SeededRng::new(30);
        let src = random_matrix(31, 1, 20, 3).flatten();
        let dst = random_matrix(32, 1, 10, 3).flatten();
        let zeros_src = TokenSet::new(3, vec![0.0f32; 60]).unwrap();
        let zeros_dst = TokenSet::new(3, vec![0.0f32; 30]).unwrap();
        let r = rng.below(21);
        let expect = bipartite_match(&src, &dst, r).unwrap();
        let got = match_shared((&src, &dst), (&zeros_src, &zeros_dst), r).unwrap();
        // Edges with positive similarity coincide; zero-similarity ties may differ in dst.
        let pos = |m: &MatchMap| -> Vec<Edge> { m.edges().iter().copied().filter(|e| e.similarity > 0.0).collect() };
        assert_eq!(pos(&got), pos(&expect));
    }
}
