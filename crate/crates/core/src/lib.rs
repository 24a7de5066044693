//! Cross-frame token merging for self-attention in video diffusion.
//!
//! Tokens of the frames in a chunk are matched against a randomly chosen
//! target frame and merged, then merged again with global tokens carried
//! across chunks, so that self-attention runs once over a compressed,
//! shared token set. Unmerging broadcasts the attention output back to
//! every absorbed position, which makes corresponding content identical
//! across frames.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the storage type to `f32`.

pub mod attention;
pub mod error;
pub mod harness;
pub mod matching;
pub mod merge;
pub mod rng;
pub mod scalar;
pub mod scheduler;
pub mod tokens;
pub mod vidtome;

pub use attention::{cost_of, self_attention, self_attention_batch, CostReport};
pub use error::{Error, Result};
pub use harness::{
    generate_video, invert_video, temporal_variance, NoiseSchedule, PipelineConfig, RunStats, ToyDenoiserConfig,
};
pub use matching::{bipartite_match, match_oracle, Edge, MatchMap};
pub use merge::{merge_tokens, unmerge_tokens, MergeLayout, MergeMode};
pub use rng::SeededRng;
pub use scalar::Scalar;
pub use scheduler::{plan_chunks, plan_with_first, ChunkPlan, OrderPolicy};
pub use vidtome::{
    global_merge, local_merge, match_shared, merge_count, merged_counts, unmerge_all, GlobalTokenState, MergeRecord,
    MergedCounts, VidToMeConfig,
};

pub type TokenSet = tokens::TokenSet<f32>;
pub type TokenMatrix = tokens::TokenMatrix<f32>;
pub type MergedTokens = merge::MergedTokens<f32>;
pub type AttentionWeights = attention::AttentionWeights<f32>;
pub type VideoLatents = harness::VideoLatents<f32>;
pub type ToyDenoiser = harness::ToyDenoiser<f32>;

pub type TokenSet64 = tokens::TokenSet<f64>;
pub type TokenMatrix64 = tokens::TokenMatrix<f64>;
pub type VideoLatents64 = harness::VideoLatents<f64>;
pub type ToyDenoiser64 = harness::ToyDenoiser<f64>;
