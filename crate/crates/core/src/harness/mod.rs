//! Desk-scale video editing loop: DDIM inversion and generation over
//! synthetic latents with a small deterministic denoiser whose attention
//! sites are wrapped by cross-frame token merging.

mod denoiser;
mod pipeline;
mod schedule;
mod video;

pub use denoiser::{AttentionSite, MergeContext, RunStats, ToyDenoiser, ToyDenoiserConfig};
pub use pipeline::{generate_video, invert_video, PipelineConfig};
pub use schedule::{ddim_step, ddim_update, Direction, NoiseSchedule};
pub use video::{frame_distance, temporal_variance, VideoLatents};
