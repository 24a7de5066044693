//! Bipartite soft matching: each src token proposes an edge to its most
//! similar dst token and the `r` strongest proposals are kept.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tokens::{cosine_from_parts, dot_f64, similarity_matrix, sq_norm_f64, TokenSet};

/// A kept edge: src token `src` merges into dst token `dst`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub similarity: f64,
}

/// The kept edges of one matching, strongest first, plus the partition sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchMap {
    edges: Vec<Edge>,
    src_size: usize,
    dst_size: usize,
}

impl MatchMap {
    /// Validates and wraps a hand-built edge list.
    pub fn new(edges: Vec<Edge>, src_size: usize, dst_size: usize) -> Result<Self> {
        if edges.len() > src_size {
            return Err(Error::Consistency(format!(
                "{} edges for {src_size} src tokens",
                edges.len()
            )));
        }
        let mut seen = vec![false; src_size];
        for e in &edges {
            if e.src >= src_size || e.dst >= dst_size {
                return Err(Error::Consistency(format!(
                    "edge {}->{} outside {src_size}x{dst_size}",
                    e.src, e.dst
                )));
            }
            if std::mem::replace(&mut seen[e.src], true) {
                return Err(Error::Consistency(format!("src {} matched twice", e.src)));
            }
        }
        if edges.windows(2).any(|w| w[0].similarity < w[1].similarity) {
            return Err(Error::Consistency("edges not sorted by similarity".into()));
        }
        Ok(Self {
            edges,
            src_size,
            dst_size,
        })
    }

    pub fn empty(src_size: usize, dst_size: usize) -> Self {
        Self {
            edges: Vec::new(),
            src_size,
            dst_size,
        }
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn src_size(&self) -> usize {
        self.src_size
    }

    pub fn dst_size(&self) -> usize {
        self.dst_size
    }

    pub fn similarities(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.iter().map(|e| e.similarity)
    }

    /// For every src token, the dst token it merged into (if any).
    pub fn dst_of_src(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.src_size];
        for e in &self.edges {
            out[e.src] = Some(e.dst);
        }
        out
    }
}

/// Strongest first; equal similarity resolves to the smaller src index.
pub(crate) fn edge_order(a: &Edge, b: &Edge) -> Ordering {
    b.similarity
        .partial_cmp(&a.similarity)
        .unwrap_or(Ordering::Equal)
        .then(a.src.cmp(&b.src))
}

/// Keeps the `r` best candidates (one per src token) in [`edge_order`].
pub(crate) fn keep_strongest(mut candidates: Vec<Edge>, r: usize) -> Vec<Edge> {
    if r == 0 {
        return Vec::new();
    }
    if r < candidates.len() {
        candidates.select_nth_unstable_by(r - 1, edge_order);
        candidates.truncate(r);
    }
    candidates.sort_unstable_by(edge_order);
    candidates
}

fn check_inputs<T: Scalar>(src: &TokenSet<T>, dst: &TokenSet<T>, r: usize) -> Result<()> {
    if dst.is_empty() {
        return Err(Error::EmptySet("dst"));
    }
    if r > src.len() {
        return Err(Error::Parameter(format!(
            "cannot keep {r} edges from {} src tokens",
            src.len()
        )));
    }
    if src.channels() != dst.channels() {
        return Err(Error::Dimension {
            expected: src.channels(),
            actual: dst.channels(),
        });
    }
    Ok(())
}

/// Best dst candidate for every src token. Argmax ties go to the smallest dst index.
pub(crate) fn best_candidates<T: Scalar>(src: &TokenSet<T>, dst: &TokenSet<T>) -> Vec<Edge> {
    let dst_norms: Vec<f64> = dst.rows().map(sq_norm_f64).collect();
    let propose = |(i, a): (usize, &[T])| {
        let na = sq_norm_f64(a);
        let mut best = Edge {
            src: i,
            dst: 0,
            similarity: f64::NEG_INFINITY,
        };
        for (j, (b, &nb)) in dst.rows().zip(&dst_norms).enumerate() {
            let s = cosine_from_parts(dot_f64(a, b), na, nb);
            if s > best.similarity {
                best.dst = j;
                best.similarity = s;
            }
        }
        best
    };
    if src.len() * dst.len() >= 1 << 14 {
        src.as_slice()
            .par_chunks_exact(src.channels())
            .enumerate()
            .map(propose)
            .collect()
    } else {
        src.rows().enumerate().map(propose).collect()
    }
}

/// Bipartite soft matching keeping exactly `r` edges.
///
/// Every src token links to its most similar dst token; the `r` links with the
/// highest cosine similarity survive. Both ties (argmax and the top-`r` cut)
/// resolve to the smallest index, so the result is fully deterministic.
pub fn bipartite_match<T: Scalar>(src: &TokenSet<T>, dst: &TokenSet<T>, r: usize) -> Result<MatchMap> {
    check_inputs(src, dst, r)?;
    let edges = keep_strongest(best_candidates(src, dst), r);
    Ok(MatchMap {
        edges,
        src_size: src.len(),
        dst_size: dst.len(),
    })
}

/// Reference matching by exhaustive enumeration: full similarity matrix,
/// a full sort of every row, then a full sort of all candidates.
///
/// Same contract as [`bipartite_match`]; intended for verification only.
pub fn match_oracle<T: Scalar>(src: &TokenSet<T>, dst: &TokenSet<T>, r: usize) -> Result<MatchMap> {
    check_inputs(src, dst, r)?;
    if src.is_empty() {
        return Ok(MatchMap::empty(0, dst.len()));
    }
    let sims = similarity_matrix(src, dst)?;
    let mut candidates = Vec::with_capacity(src.len());
    for i in 0..sims.rows {
        let mut row: Vec<(usize, f64)> = sims.row(i).iter().copied().enumerate().collect();
        row.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        candidates.push(Edge {
            src: i,
            dst: row[0].0,
            similarity: row[0].1,
        });
    }
    candidates.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap()
            .then(a.src.cmp(&b.src))
    });
    candidates.truncate(r);
    Ok(MatchMap {
        edges: candidates,
        src_size: src.len(),
        dst_size: dst.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn set(rows: &[&[f64]]) -> TokenSet<f64> {
        TokenSet::from_rows(rows).unwrap()
    }

    fn random_set(rng: &mut SeededRng, n: usize, c: usize) -> TokenSet<f32> {
        let data = (0..n * c).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        TokenSet::new(c, data).unwrap()
    }

    #[test]
    fn identity_match() {
        let a = set(&[&[1.0, 0.0]]);
        let m = bipartite_match(&a, &a, 1).unwrap();
        assert_eq!(
            m.edges(),
            &[Edge {
                src: 0,
                dst: 0,
                similarity: 1.0
            }]
        );
    }

    #[test]
    fn drops_weakest_candidate() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let src = set(&[&[1.0, 0.0], &[0.0, 1.0], &[h, h]]);
        let dst = set(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let m = bipartite_match(&src, &dst, 2).unwrap();
        let pairs: Vec<_> = m.edges().iter().map(|e| (e.src, e.dst, e.similarity)).collect();
        assert_eq!(pairs, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        assert_eq!(m, match_oracle(&src, &dst, 2).unwrap());
    }

    #[test]
    fn local_setup_edge_count() {
        let mut rng = SeededRng::new(1);
        let src = random_set(&mut rng, 300, 4);
        let dst = random_set(&mut rng, 100, 4);
        let r = (0.9f64 * 300.0).floor() as usize;
        assert_eq!(r, 270);
        assert_eq!(bipartite_match(&src, &dst, r).unwrap().len(), 270);
    }

    #[test]
    fn errors() {
        let a = set(&[&[1.0, 0.0]]);
        let empty = TokenSet::<f64>::empty(2);
        assert!(matches!(bipartite_match(&a, &a, 2), Err(Error::Parameter(_))));
        assert!(matches!(bipartite_match(&a, &empty, 0), Err(Error::EmptySet(_))));
        assert!(matches!(match_oracle(&a, &a, 2), Err(Error::Parameter(_))));
        assert!(matches!(match_oracle(&a, &empty, 1), Err(Error::EmptySet(_))));
    }

    #[test]
    fn r_zero_is_empty() {
        let a = set(&[&[1.0, 0.0]]);
        assert!(match_oracle(&a, &a, 0).unwrap().is_empty());
        assert!(bipartite_match(&a, &a, 0).unwrap().is_empty());
    }

    #[test]
    fn ties_resolve_to_smallest_index() {
        // Two identical dst tokens: argmax picks dst 0. Two identical src tokens: cut keeps src 0.
        let src = set(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let dst = set(&[&[2.0, 2.0], &[3.0, 3.0]]);
        let m = bipartite_match(&src, &dst, 1).unwrap();
        assert_eq!((m.edges()[0].src, m.edges()[0].dst), (0, 0));
    }

    #[test]
    fn seed_42_instance_matches_oracle() {
        let mut rng = SeededRng::new(42);
        let src = random_set(&mut rng, 32, 8);
        let dst = random_set(&mut rng, 16, 8);
        let fast = bipartite_match(&src, &dst, 20).unwrap();
        assert_eq!(fast, match_oracle(&src, &dst, 20).unwrap());
        assert_eq!(fast.len(), 20);
    }

    #[test]
    fn hand_built_map_validation() {
        let e = |src, dst, similarity| Edge { src, dst, similarity };
        assert!(MatchMap::new(vec![e(0, 0, 0.5), e(1, 0, 0.4)], 2, 1).is_ok());
        assert!(MatchMap::new(vec![e(0, 0, 0.5), e(0, 0, 0.4)], 2, 1).is_err());
        assert!(MatchMap::new(vec![e(0, 0, 0.4), e(1, 0, 0.5)], 2, 1).is_err());
        assert!(MatchMap::new(vec![e(0, 3, 0.5)], 2, 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn equals_oracle(seed in any::<u64>(), s in 1usize..64, d in 1usize..64, c in 1usize..6) {
            let mut rng = SeededRng::new(seed);
            let src = random_set(&mut rng, s, c);
            let dst = random_set(&mut rng, d, c);
            let r = rng.below(s + 1);
            let fast = bipartite_match(&src, &dst, r).unwrap();
            prop_assert_eq!(&fast, &match_oracle(&src, &dst, r).unwrap());
            prop_assert_eq!(fast.len(), r);
            let map = MatchMap::new(fast.edges().to_vec(), s, d);
            prop_assert!(map.is_ok());
        }

        #[test]
        fn min_kept_similarity_non_increasing_in_r(seed in any::<u64>(), s in 2usize..40, d in 1usize..20) {
            let mut rng = SeededRng::new(seed);
            let src = random_set(&mut rng, s, 3);
            let dst = random_set(&mut rng, d, 3);
            let mut last = f64::INFINITY;
            for r in 1..=s {
                let m = bipartite_match(&src, &dst, r).unwrap();
                let min = m.similarities().fold(f64::INFINITY, f64::min);
                prop_assert!(min <= last);
                last = min;
            }
        }

        #[test]
        fn duplicated_src_matches_with_unit_similarity(seed in any::<u64>(), d in 1usize..30, s in 1usize..30) {
            let mut rng = SeededRng::new(seed);
            let dst = random_set(&mut rng, d, 4);
            let picks: Vec<Vec<f32>> = (0..s).map(|_| dst.row(rng.below(d)).to_vec()).collect();
            let src = TokenSet::from_rows(&picks).unwrap();
            let m = bipartite_match(&src, &dst, s).unwrap();
            prop_assert!(m.similarities().all(|v| v == 1.0));
        }
    }
}
