use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tokens::TokenMatrix;

/// `frames` latent grids of `height x width x channels`, row-major per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoLatents<T> {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> VideoLatents<T> {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(Error::Input(format!(
                "latent shape {frames}x{height}x{width}x{channels} has an empty dimension"
            )));
        }
        let expected = frames * height * width * channels;
        if data.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("latent values must be finite".into()));
        }
        Ok(Self {
            frames,
            height,
            width,
            channels,
            data,
        })
    }

    pub(crate) fn from_frames_unchecked(frames: usize, height: usize, width: usize, channels: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), frames * height * width * channels);
        Self {
            frames,
            height,
            width,
            channels,
            data,
        }
    }

    /// I.i.d. standard normal latents.
    pub fn random(frames: usize, height: usize, width: usize, channels: usize, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let data = (0..frames * height * width * channels).map(|_| T::lit(rng.normal())).collect();
        Self::new(frames, height, width, channels, data)
    }

    /// A shared random base frame, shifted by `drift * f * d` in frame `f` along a
    /// fixed random unit direction `d`, plus i.i.d. noise of scale `noise`.
    pub fn drifting(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        drift: f64,
        noise: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let per_frame = height * width * channels;
        let base: Vec<f64> = (0..per_frame).map(|_| rng.normal()).collect();
        let mut dir: Vec<f64> = (0..per_frame).map(|_| rng.normal()).collect();
        let norm = (dir.iter().map(|v| v * v).sum::<f64>() / per_frame as f64).sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);
        let mut data = Vec::with_capacity(frames * per_frame);
        for f in 0..frames {
            for (b, d) in base.iter().zip(&dir) {
                data.push(T::lit(b + drift * f as f64 * d + noise * rng.normal()));
            }
        }
        Self::new(frames, height, width, channels, data)
    }

    /// The same frame repeated `frames` times.
    pub fn repeated(frame: &[T], frames: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        let data = (0..frames).flat_map(|_| frame.iter().copied()).collect();
        Self::new(frames, height, width, channels, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Tokens per frame when every latent pixel is one token.
    pub fn tokens_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn frame(&self, f: usize) -> &[T] {
        let s = self.frame_len();
        &self.data[f * s..(f + 1) * s]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.frames, self.height, self.width, self.channels) == (other.frames, other.height, other.width, other.channels)
    }

    /// Frames as a `frames x (H*W) x C` token matrix.
    pub fn to_tokens(&self) -> TokenMatrix<T> {
        TokenMatrix::from_raw(self.frames, self.tokens_per_frame(), self.channels, self.data.clone())
    }

    /// `||self - other|| / ||other||` over all values.
    pub fn relative_error(&self, reference: &Self) -> f64 {
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for (a, b) in self.data.iter().zip(&reference.data) {
            let (a, b) = (a.as_f64(), b.as_f64());
            num += (a - b) * (a - b);
            den += b * b;
        }
        (num / den.max(f64::MIN_POSITIVE)).sqrt()
    }
}

/// Mean squared difference between two frames, averaged over all positions.
pub fn frame_distance<T: Scalar>(video: &VideoLatents<T>, a: usize, b: usize) -> f64 {
    let (fa, fb) = (video.frame(a), video.frame(b));
    fa.iter()
        .zip(fb)
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / fa.len() as f64
}

/// Mean over consecutive frame pairs of [`frame_distance`].
pub fn temporal_variance<T: Scalar>(video: &VideoLatents<T>) -> Result<f64> {
    if video.frames() < 2 {
        return Err(Error::Input("temporal variance needs at least two frames".into()));
    }
    let pairs = video.frames() - 1;
    Ok((0..pairs).map(|f| frame_distance(video, f, f + 1)).sum::<f64>() / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_frames_have_zero_variance() {
        let frame = [0.5f32, -1.0, 2.0, 0.25];
        let v = VideoLatents::repeated(&frame, 5, 1, 2, 2).unwrap();
        assert_eq!(temporal_variance(&v).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_gives_delta_squared() {
        let delta = 0.3f64;
        let base = [0.5f64, -1.0, 2.0, 0.25];
        let data: Vec<f64> = base.iter().copied().chain(base.iter().map(|v| v + delta)).collect();
        let v = VideoLatents::new(2, 2, 2, 1, data).unwrap();
        assert!((temporal_variance(&v).unwrap() - delta * delta).abs() < 1e-15);
    }

    #[test]
    fn needs_two_frames() {
        let v = VideoLatents::<f32>::random(1, 2, 2, 1, 0).unwrap();
        assert!(matches!(temporal_variance(&v), Err(Error::Input(_))));
    }

    #[test]
    fn shape_checks() {
        assert!(VideoLatents::<f32>::new(1, 2, 2, 1, vec![0.0; 3]).is_err());
        assert!(VideoLatents::<f32>::new(0, 2, 2, 1, vec![]).is_err());
    }

    #[test]
    fn drift_grows_with_distance() {
        let v = VideoLatents::<f64>::drifting(8, 4, 4, 2, 0.1, 0.0, 3).unwrap();
        assert!(frame_distance(&v, 0, 7) > frame_distance(&v, 0, 1));
        assert!(temporal_variance(&v).unwrap() >= 0.0);
    }
}
