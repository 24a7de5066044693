//! Token containers and similarity primitives.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Norms below this are treated as zero: such tokens have similarity 0 to everything.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// A flat, ordered list of tokens, each `channels` long.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet<T> {
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> TokenSet<T> {
    pub fn new(channels: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Parameter("token channels must be >= 1".into()));
        }
        if data.len() % channels != 0 {
            return Err(Error::Dimension {
                expected: (data.len() / channels + 1) * channels,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("token values must be finite".into()));
        }
        Ok(Self { channels, data })
    }

    pub fn empty(channels: usize) -> Self {
        assert!(channels > 0, "token channels must be >= 1");
        Self {
            channels,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let channels = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or(Error::EmptySet("no rows given"))?;
        let mut data = Vec::with_capacity(rows.len() * channels);
        for row in rows {
            let row = row.as_ref();
            if row.len() != channels {
                return Err(Error::Dimension {
                    expected: channels,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(channels, data)
    }

    /// Builds a set without the finiteness scan. Used on hot paths whose inputs were already validated.
    pub(crate) fn from_raw(channels: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len() % channels, 0);
        Self { channels, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.channels)
    }

    pub fn push(&mut self, row: &[T]) {
        assert_eq!(row.len(), self.channels);
        self.data.extend_from_slice(row);
    }

    pub fn extend(&mut self, other: &TokenSet<T>) {
        assert_eq!(other.channels, self.channels);
        self.data.extend_from_slice(&other.data);
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Position of one token inside a [`TokenMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenIndex {
    pub frame: usize,
    pub token: usize,
}

/// A stack of `frames` frames, each holding `tokens_per_frame` tokens of `channels` values.
/// Row-major in (frame, token, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix<T> {
    frames: usize,
    tokens_per_frame: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> TokenMatrix<T> {
    pub fn new(frames: usize, tokens_per_frame: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if frames == 0 || tokens_per_frame == 0 || channels == 0 {
            return Err(Error::Parameter(format!(
                "token matrix dimensions must be >= 1, got {frames}x{tokens_per_frame}x{channels}"
            )));
        }
        let expected = frames * tokens_per_frame * channels;
        if data.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("token values must be finite".into()));
        }
        Ok(Self {
            frames,
            tokens_per_frame,
            channels,
            data,
        })
    }

    /// Stacks equally sized frames.
    pub fn from_frames(frames: &[TokenSet<T>]) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptySet("no frames given"))?;
        let (n, c) = (first.len(), first.channels());
        let mut data = Vec::with_capacity(frames.len() * n * c);
        for f in frames {
            if f.channels() != c {
                return Err(Error::Dimension {
                    expected: c,
                    actual: f.channels(),
                });
            }
            if f.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    actual: f.len(),
                });
            }
            data.extend_from_slice(f.as_slice());
        }
        Self::new(frames.len(), n, c, data)
    }

    pub(crate) fn from_raw(frames: usize, tokens_per_frame: usize, channels: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), frames * tokens_per_frame * channels);
        Self {
            frames,
            tokens_per_frame,
            channels,
            data,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.tokens_per_frame
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn frame(&self, f: usize) -> &[T] {
        let stride = self.tokens_per_frame * self.channels;
        &self.data[f * stride..(f + 1) * stride]
    }

    pub fn frame_set(&self, f: usize) -> TokenSet<T> {
        TokenSet::from_raw(self.channels, self.frame(f).to_vec())
    }

    pub fn token(&self, idx: TokenIndex) -> Result<&[T]> {
        if idx.frame >= self.frames || idx.token >= self.tokens_per_frame {
            return Err(Error::Parameter(format!(
                "token index ({}, {}) out of bounds for {}x{}",
                idx.frame, idx.token, self.frames, self.tokens_per_frame
            )));
        }
        let start = (idx.frame * self.tokens_per_frame + idx.token) * self.channels;
        Ok(&self.data[start..start + self.channels])
    }

    /// All tokens of all frames as one flat set, frame-major.
    pub fn flatten(&self) -> TokenSet<T> {
        TokenSet::from_raw(self.channels, self.data.clone())
    }
}

#[inline]
pub(crate) fn dot_f64<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

#[inline]
pub(crate) fn sq_norm_f64<T: Scalar>(a: &[T]) -> f64 {
    a.iter().map(|x| x.as_f64() * x.as_f64()).sum()
}

/// Cosine from a dot product and the two squared norms.
///
/// `sqrt(n2a * n2b)` rather than `sqrt(n2a) * sqrt(n2b)` so that a vector
/// compared with an exact copy of itself yields exactly 1.0.
#[inline]
pub(crate) fn cosine_from_parts(dot: f64, sq_norm_a: f64, sq_norm_b: f64) -> f64 {
    let floor = DEGENERATE_NORM * DEGENERATE_NORM;
    if sq_norm_a < floor || sq_norm_b < floor {
        return 0.0;
    }
    (dot / (sq_norm_a * sq_norm_b).sqrt()).clamp(-1.0, 1.0)
}

/// Cosine similarity accumulated in `f64`.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(cosine_from_parts(dot_f64(a, b), sq_norm_f64(a), sq_norm_f64(b)))
}

/// Dense `S x D` matrix of cosine similarities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn similarity_matrix<T: Scalar>(src: &TokenSet<T>, dst: &TokenSet<T>) -> Result<SimilarityMatrix> {
    if src.is_empty() {
        return Err(Error::EmptySet("src"));
    }
    if dst.is_empty() {
        return Err(Error::EmptySet("dst"));
    }
    if src.channels() != dst.channels() {
        return Err(Error::Dimension {
            expected: src.channels(),
            actual: dst.channels(),
        });
    }
    let mut values = Vec::with_capacity(src.len() * dst.len());
    for a in src.rows() {
        for b in dst.rows() {
            values.push(cosine_similarity(a, b)?);
        }
    }
    Ok(SimilarityMatrix {
        rows: src.len(),
        cols: dst.len(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0f32, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0f32, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[3.0f64, 4.0], &[4.0, 3.0]).unwrap();
        assert!((c - 0.96).abs() < 1e-15);
    }

    #[test]
    fn cosine_degenerate_and_mismatch() {
        assert_eq!(cosine_similarity(&[0.0f32, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1e-13f64, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine_similarity(&[1.0f32], &[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn similarity_matrix_examples() {
        let one = TokenSet::from_rows(&[[1.0f32, 0.0]]).unwrap();
        assert_eq!(similarity_matrix(&one, &one).unwrap().values, vec![1.0]);

        let src = TokenSet::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]]).unwrap();
        let m = similarity_matrix(&src, &one).unwrap();
        assert_eq!((m.rows, m.cols), (2, 1));
        assert_eq!(m.values, vec![1.0, 0.0]);

        let empty = TokenSet::<f32>::empty(2);
        assert!(matches!(similarity_matrix(&empty, &one), Err(Error::EmptySet(_))));
        assert!(matches!(similarity_matrix(&one, &empty), Err(Error::EmptySet(_))));
    }

    #[test]
    fn matrix_construction_checks() {
        assert!(TokenMatrix::<f32>::new(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(TokenMatrix::<f32>::new(0, 2, 2, vec![]).is_err());
        assert!(TokenMatrix::new(1, 1, 2, vec![1.0f32, f32::NAN]).is_err());
        let m = TokenMatrix::new(2, 3, 2, (0..12).map(|v| v as f32).collect()).unwrap();
        assert_eq!(m.token(TokenIndex { frame: 1, token: 2 }).unwrap(), &[10.0, 11.0]);
        assert!(m.token(TokenIndex { frame: 2, token: 0 }).is_err());
        assert_eq!(m.frame_set(1).row(0), &[6.0, 7.0]);
    }

    fn vec_strategy(c: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, c)
    }

    proptest! {
        #[test]
        fn scale_invariant(a in vec_strategy(6), b in vec_strategy(6), lambda in 1e-3f64..1e3) {
            let scaled: Vec<f64> = a.iter().map(|v| v * lambda).collect();
            let c0 = cosine_similarity(&a, &b).unwrap();
            let c1 = cosine_similarity(&scaled, &b).unwrap();
            prop_assert!((c0 - c1).abs() <= 1e-9);
        }

        #[test]
        fn symmetric_and_bounded(a in vec_strategy(5), b in vec_strategy(5)) {
            let ab = cosine_similarity(&a, &b).unwrap();
            prop_assert_eq!(ab, cosine_similarity(&b, &a).unwrap());
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn self_similarity_unit_diagonal(rows in prop::collection::vec(vec_strategy(4), 1..12)) {
            let set = TokenSet::from_rows(&rows).unwrap();
            let m = similarity_matrix(&set, &set).unwrap();
            for i in 0..set.len() {
                if sq_norm_f64(set.row(i)) >= DEGENERATE_NORM * DEGENERATE_NORM {
                    prop_assert_eq!(m.get(i, i), 1.0);
                }
            }
        }
    }
}
