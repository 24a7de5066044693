use super::denoiser::{MergeContext, RunStats, ToyDenoiser};
use super::schedule::{ddim_step, Direction, NoiseSchedule};
use super::video::VideoLatents;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::scheduler::{plan_chunks, OrderPolicy};
use crate::vidtome::{GlobalTokenState, VidToMeConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub vidtome: VidToMeConfig,
    pub order: OrderPolicy,
    /// Master switch for merging during generation.
    pub merging: bool,
    pub merge_during_inversion: bool,
    /// Fixed-point refinements per inversion step (0 gives plain DDIM inversion).
    pub inversion_iterations: usize,
    /// Relative change at which refinement stops early. The default suits
    /// `f32`; `f64` runs can go lower.
    pub inversion_tolerance: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            vidtome: VidToMeConfig::default(),
            order: OrderPolicy::Random,
            merging: true,
            merge_during_inversion: false,
            inversion_iterations: 30,
            inversion_tolerance: 1e-6,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.vidtome.validate()?;
        self.order.validate()?;
        if !(self.inversion_tolerance >= 0.0) {
            return Err(Error::Parameter("inversion_tolerance must be >= 0".into()));
        }
        Ok(())
    }

    fn merges_in_generation(&self) -> bool {
        self.merging && self.vidtome.merging_active()
    }

    fn merges_in_inversion(&self) -> bool {
        self.merge_during_inversion && self.vidtome.merging_active()
    }
}

fn check_shapes<T: Scalar>(video: &VideoLatents<T>, model: &ToyDenoiser<T>, conditioning: &[T]) -> Result<()> {
    if video.channels() != model.latent_channels() {
        return Err(Error::Dimension {
            expected: model.latent_channels(),
            actual: video.channels(),
        });
    }
    if conditioning.len() != model.token_channels() {
        return Err(Error::Dimension {
            expected: model.token_channels(),
            actual: conditioning.len(),
        });
    }
    Ok(())
}

/// Noise prediction for every frame at step `t`.
///
/// With merging, frames are split by a fresh chunk plan and chunks run in
/// its processing order, each site carrying its own global tokens. Without
/// merging, frames run sequentially in groups of `chunk_size`.
fn predict_video<T: Scalar>(
    z: &VideoLatents<T>,
    t: usize,
    model: &ToyDenoiser<T>,
    cfg: &PipelineConfig,
    conditioning: &[T],
    merge: bool,
    rng: &mut SeededRng,
    stats: &mut RunStats,
) -> Result<Vec<T>> {
    let n = z.frames();
    let b = cfg.vidtome.chunk_size;
    let mut eps: Vec<Vec<T>> = vec![Vec::new(); n];
    if merge {
        let plan = plan_chunks(n, b, cfg.order, rng)?;
        let mut states = vec![GlobalTokenState::new(t); model.sites().len()];
        for range in plan.ordered() {
            let frames: Vec<&[T]> = range.clone().map(|f| z.frame(f)).collect();
            let ctx = MergeContext {
                cfg: &cfg.vidtome,
                states: &mut states,
                rng,
            };
            let out = model.predict_chunk(&frames, t, conditioning, Some(ctx), stats)?;
            for (f, e) in range.zip(out) {
                eps[f] = e;
            }
        }
    } else {
        for start in (0..n).step_by(b) {
            let range = start..(start + b).min(n);
            let frames: Vec<&[T]> = range.clone().map(|f| z.frame(f)).collect();
            let out = model.predict_chunk(&frames, t, conditioning, None, stats)?;
            for (f, e) in range.zip(out) {
                eps[f] = e;
            }
        }
    }
    Ok(eps.concat())
}

fn relative_change<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        num += (x - y) * (x - y);
        den += y * y;
    }
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// DDIM inversion `t = 0 -> T`.
///
/// Each step is then refined by fixed-point iteration so that the step from
/// `t + 1` back to `t` uses the prediction at `z_{t+1}`, which makes a
/// later [`generate_video`] with the same model and conditioning retrace
/// the path. Refinement stops at the tolerance or once the change stops
/// shrinking.
pub fn invert_video<T: Scalar>(
    video: &VideoLatents<T>,
    model: &ToyDenoiser<T>,
    schedule: &NoiseSchedule,
    cfg: &PipelineConfig,
    conditioning: &[T],
    rng: &mut SeededRng,
    stats: &mut RunStats,
) -> Result<VideoLatents<T>> {
    cfg.validate()?;
    check_shapes(video, model, conditioning)?;
    let merge = cfg.merges_in_inversion();
    let shape = |data| VideoLatents::from_frames_unchecked(video.frames(), video.height(), video.width(), video.channels(), data);
    let mut z = video.clone();
    for t in 0..schedule.steps() {
        let step_rng = rng.fork();
        let eps = predict_video(&z, t, model, cfg, conditioning, merge, &mut step_rng.clone(), stats)?;
        let mut next = shape(ddim_step(z.as_slice(), &eps, t, schedule, Direction::Invert)?);
        let mut last_change = f64::INFINITY;
        for _ in 0..cfg.inversion_iterations {
            let eps = predict_video(&next, t + 1, model, cfg, conditioning, merge, &mut step_rng.clone(), stats)?;
            let candidate = ddim_step(z.as_slice(), &eps, t, schedule, Direction::Invert)?;
            let change = relative_change(&candidate, next.as_slice());
            next = shape(candidate);
            if change <= cfg.inversion_tolerance || change >= last_change {
                break;
            }
            last_change = change;
        }
        z = next;
    }
    Ok(z)
}

/// DDIM generation `t = T -> 1` with merged attention at the enabled sites.
pub fn generate_video<T: Scalar>(
    noisy: &VideoLatents<T>,
    model: &ToyDenoiser<T>,
    schedule: &NoiseSchedule,
    cfg: &PipelineConfig,
    conditioning: &[T],
    rng: &mut SeededRng,
    stats: &mut RunStats,
) -> Result<VideoLatents<T>> {
    cfg.validate()?;
    check_shapes(noisy, model, conditioning)?;
    let merge = cfg.merges_in_generation();
    let mut z = noisy.clone();
    for t in (1..=schedule.steps()).rev() {
        let mut step_rng = rng.fork();
        let eps = predict_video(&z, t, model, cfg, conditioning, merge, &mut step_rng, stats)?;
        let data = ddim_step(z.as_slice(), &eps, t, schedule, Direction::Denoise)?;
        z = VideoLatents::from_frames_unchecked(z.frames(), z.height(), z.width(), z.channels(), data);
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::denoiser::ToyDenoiserConfig;
    use crate::harness::video::temporal_variance;

    fn model() -> ToyDenoiser<f32> {
        ToyDenoiser::new(&ToyDenoiserConfig::default()).unwrap()
    }

    #[test]
    fn near_identity_schedule_barely_moves() {
        let m = model();
        let v = VideoLatents::<f32>::random(2, 4, 4, 4, 1).unwrap();
        let s = NoiseSchedule::new(vec![1.0 - 1e-12]).unwrap();
        let out = invert_video(&v, &m, &s, &PipelineConfig::default(), m.default_conditioning(), &mut SeededRng::new(0), &mut RunStats::default()).unwrap();
        assert!(out.relative_error(&v) < 1e-5);
    }

    #[test]
    fn inversion_preserves_shape() {
        let m = model();
        let v = VideoLatents::<f32>::random(8, 4, 4, 4, 2).unwrap();
        let s = NoiseSchedule::linear(3).unwrap();
        let out = invert_video(&v, &m, &s, &PipelineConfig::default(), m.default_conditioning(), &mut SeededRng::new(0), &mut RunStats::default()).unwrap();
        assert!(out.same_shape(&v));
    }

    #[test]
    fn short_round_trip() {
        let m = model();
        let v = VideoLatents::<f64>::random(3, 4, 4, 4, 3).unwrap();
        let m64 = ToyDenoiser::<f64>::new(&ToyDenoiserConfig::default()).unwrap();
        let s = NoiseSchedule::linear(10).unwrap();
        let cfg = PipelineConfig {
            merging: false,
            inversion_tolerance: 1e-13,
            ..Default::default()
        };
        let cond = m64.default_conditioning().to_vec();
        let mut stats = RunStats::default();
        let noisy = invert_video(&v, &m64, &s, &cfg, &cond, &mut SeededRng::new(0), &mut stats).unwrap();
        let back = generate_video(&noisy, &m64, &s, &cfg, &cond, &mut SeededRng::new(1), &mut stats).unwrap();
        assert!(back.relative_error(&v) < 1e-9, "{}", back.relative_error(&v));
        assert_eq!(m.latent_channels(), 4);
    }

    #[test]
    fn identical_frames_stay_identical() {
        let m = model();
        let frame: Vec<f32> = VideoLatents::<f32>::random(1, 4, 4, 4, 4).unwrap().into_vec();
        let v = VideoLatents::repeated(&frame, 6, 4, 4, 4).unwrap();
        let s = NoiseSchedule::linear(5).unwrap();
        // Every duplicate must merge: surviving duplicates change key multiplicities,
        // and chunks of different length would then attend differently.
        let cfg = PipelineConfig {
            vidtome: VidToMeConfig {
                local_ratio: 1.0,
                global_ratio: 1.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = generate_video(&v, &m, &s, &cfg, m.default_conditioning(), &mut SeededRng::new(5), &mut RunStats::default()).unwrap();
        assert_eq!(temporal_variance(&out).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = model();
        let v = VideoLatents::<f32>::random(2, 4, 4, 3, 1).unwrap();
        let s = NoiseSchedule::linear(2).unwrap();
        let err = generate_video(&v, &m, &s, &PipelineConfig::default(), m.default_conditioning(), &mut SeededRng::new(0), &mut RunStats::default());
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }
}
