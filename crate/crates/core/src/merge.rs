//! Merge tokens along a [`MatchMap`] and invert the merge after attention.
//!
//! Merged layout is `[surviving src tokens in original order, dst tokens in original order]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::MatchMap;
use crate::scalar::Scalar;
use crate::tokens::TokenSet;

/// How a dst token absorbs the src tokens matched to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    /// The dst value is kept unchanged.
    #[default]
    Replace,
    /// The dst value becomes the mean of itself and every src merged into it.
    Mean,
}

/// Everything needed to scatter a merged sequence back to its src and dst positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeLayout {
    map: MatchMap,
    src_order: Vec<usize>,
}

impl MergeLayout {
    pub fn new(map: MatchMap) -> Self {
        let dst_of = map.dst_of_src();
        let src_order = (0..map.src_size()).filter(|&i| dst_of[i].is_none()).collect();
        Self { map, src_order }
    }

    /// Rebuilds a layout from stored parts; rejects provenance that cannot be inverted.
    pub fn from_parts(map: MatchMap, src_order: Vec<usize>) -> Result<Self> {
        let layout = Self { map, src_order };
        layout.validate()?;
        Ok(layout)
    }

    pub fn map(&self) -> &MatchMap {
        &self.map
    }

    /// Original indices of the src tokens that were not merged away.
    pub fn src_order(&self) -> &[usize] {
        &self.src_order
    }

    pub fn src_size(&self) -> usize {
        self.map.src_size()
    }

    pub fn dst_size(&self) -> usize {
        self.map.dst_size()
    }

    pub fn merged_len(&self) -> usize {
        self.src_order.len() + self.map.dst_size()
    }

    fn validate(&self) -> Result<()> {
        let (s, d) = (self.map.src_size(), self.map.dst_size());
        if self.src_order.len() + self.map.len() != s {
            return Err(Error::Consistency(format!(
                "{} surviving + {} merged src tokens != {s}",
                self.src_order.len(),
                self.map.len()
            )));
        }
        let mut owner = vec![false; s];
        for &i in &self.src_order {
            if i >= s {
                return Err(Error::Consistency(format!("surviving src index {i} >= {s}")));
            }
            owner[i] = true;
        }
        for e in self.map.edges() {
            if e.src >= s || e.dst >= d {
                return Err(Error::Consistency(format!(
                    "edge {}->{} outside {s}x{d}",
                    e.src, e.dst
                )));
            }
            if std::mem::replace(&mut owner[e.src], true) {
                return Err(Error::Consistency(format!("src {} both kept and merged", e.src)));
            }
        }
        if self.src_order.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Consistency("surviving src indices out of order".into()));
        }
        Ok(())
    }

    /// Scatters `values` (one per merged token) back into `(src, dst)`.
    pub fn unmerge<T: Scalar>(&self, values: &TokenSet<T>) -> Result<(TokenSet<T>, TokenSet<T>)> {
        self.validate()?;
        if values.len() != self.merged_len() {
            return Err(Error::Consistency(format!(
                "merged sequence has {} tokens, layout expects {}",
                values.len(),
                self.merged_len()
            )));
        }
        let c = values.channels();
        let kept = self.src_order.len();
        let mut slot = vec![usize::MAX; self.src_size()];
        for (pos, &i) in self.src_order.iter().enumerate() {
            slot[i] = pos;
        }
        for e in self.map.edges() {
            slot[e.src] = kept + e.dst;
        }
        let mut src = Vec::with_capacity(self.src_size() * c);
        for &pos in &slot {
            src.extend_from_slice(values.row(pos));
        }
        let dst = values.as_slice()[kept * c..].to_vec();
        Ok((TokenSet::from_raw(c, src), TokenSet::from_raw(c, dst)))
    }
}

/// A merged token sequence together with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedTokens<T> {
    tokens: TokenSet<T>,
    layout: MergeLayout,
}

impl<T: Scalar> MergedTokens<T> {
    pub fn tokens(&self) -> &TokenSet<T> {
        &self.tokens
    }

    pub fn layout(&self) -> &MergeLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn into_parts(self) -> (TokenSet<T>, MergeLayout) {
        (self.tokens, self.layout)
    }

    /// Swaps in new per-token values (e.g. attention output) under the same provenance.
    pub fn with_tokens(self, tokens: TokenSet<T>) -> Result<Self> {
        if tokens.len() != self.layout.merged_len() || tokens.channels() != self.tokens.channels() {
            return Err(Error::Consistency(format!(
                "replacement has {} tokens of {} channels, expected {} of {}",
                tokens.len(),
                tokens.channels(),
                self.layout.merged_len(),
                self.tokens.channels()
            )));
        }
        Ok(Self {
            tokens,
            layout: self.layout,
        })
    }
}

pub fn merge_tokens<T: Scalar>(
    src: &TokenSet<T>,
    dst: &TokenSet<T>,
    map: &MatchMap,
    mode: MergeMode,
) -> Result<MergedTokens<T>> {
    if map.src_size() != src.len() || map.dst_size() != dst.len() {
        return Err(Error::Consistency(format!(
            "map built for {}x{} applied to {}x{}",
            map.src_size(),
            map.dst_size(),
            src.len(),
            dst.len()
        )));
    }
    if src.channels() != dst.channels() {
        return Err(Error::Dimension {
            expected: src.channels(),
            actual: dst.channels(),
        });
    }
    let layout = MergeLayout::new(map.clone());
    let c = dst.channels();
    let mut data = Vec::with_capacity(layout.merged_len() * c);
    for &i in layout.src_order() {
        data.extend_from_slice(src.row(i));
    }
    match mode {
        MergeMode::Replace => data.extend_from_slice(dst.as_slice()),
        MergeMode::Mean => {
            let mut sums: Vec<f64> = dst.as_slice().iter().map(|v| v.as_f64()).collect();
            let mut counts = vec![1usize; dst.len()];
            for e in map.edges() {
                counts[e.dst] += 1;
                for (acc, v) in sums[e.dst * c..(e.dst + 1) * c].iter_mut().zip(src.row(e.src)) {
                    *acc += v.as_f64();
                }
            }
            for (j, row) in sums.chunks_exact(c).enumerate() {
                let n = counts[j] as f64;
                data.extend(row.iter().map(|s| T::lit(s / n)));
            }
        }
    }
    Ok(MergedTokens {
        tokens: TokenSet::from_raw(c, data),
        layout,
    })
}

/// Restores src and dst counts and ordering; merged-away src tokens take their dst's value.
pub fn unmerge_tokens<T: Scalar>(merged: &MergedTokens<T>) -> Result<(TokenSet<T>, TokenSet<T>)> {
    merged.layout.unmerge(&merged.tokens)
}
