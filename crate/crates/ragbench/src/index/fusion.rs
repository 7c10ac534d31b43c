//! Hybrid search: weighted fusion of BM25 and dense results.
//!
//! Each side contributes its top `candidate_factor * k` hits. Scores are
//! min-max normalized per list (BM25 and cosine live on incommensurate
//! scales), weighted dense : sparse = 3 : 1, and the union is reranked.

use std::collections::BTreeMap;

use crate::backend::EmbeddingVector;
use crate::error::{RagError, Result};

use super::{sort_hits, DenseIndex, HitOrigin, ScoredHit, SparseIndex};

pub const HYBRID_DENSE_WEIGHT: f64 = 0.75;
pub const HYBRID_SPARSE_WEIGHT: f64 = 0.25;
pub const DEFAULT_CANDIDATE_FACTOR: usize = 4;

/// Min-max normalizes scores to [0, 1] over one hit list. Lists with a
/// single score value (including singletons) normalize to 1.0.
fn minmax_normalized(hits: &[ScoredHit]) -> BTreeMap<&str, f64> {
    let mut out = BTreeMap::new();
    if hits.is_empty() {
        return out;
    }
    let min = hits.iter().map(|h| h.score).fold(f64::INFINITY, f64::min);
    let max = hits
        .iter()
        .map(|h| h.score)
        .fold(f64::NEG_INFINITY, f64::max);
    for h in hits {
        let norm = if max > min { (h.score - min) / (max - min) } else { 1.0 };
        out.insert(h.chunk_id.as_str(), norm);
    }
    out
}

/// Weighted combination of one candidate's normalized scores; a side
/// the candidate is missing from contributes 0.
pub fn fused_score(dense_norm: f64, sparse_norm: f64) -> f64 {
    HYBRID_DENSE_WEIGHT * dense_norm + HYBRID_SPARSE_WEIGHT * sparse_norm
}

/// Fused top-`k` over both indexes. The indexes must cover the same
/// chunk set. A candidate absent from one list contributes 0 for that
/// component.
pub fn hybrid_search(
    query: &str,
    query_vec: &EmbeddingVector,
    sparse: &SparseIndex,
    dense: &DenseIndex,
    k: usize,
    candidate_factor: usize,
) -> Result<Vec<ScoredHit>> {
    if k == 0 {
        return Err(RagError::InvalidInput("top-k must be >= 1".into()));
    }
    if !sparse.same_chunk_set(dense.ids()) {
        return Err(RagError::InvalidInput(
            "sparse and dense indexes cover different chunk sets".into(),
        ));
    }
    if dense.is_empty() {
        return Ok(Vec::new());
    }
    let n_c = candidate_factor.max(1) * k;
    let sparse_hits = sparse.bm25_search(query, n_c)?;
    let dense_hits = dense.search(query_vec, n_c)?;

    let sparse_norm = minmax_normalized(&sparse_hits);
    let dense_norm = minmax_normalized(&dense_hits);

    let mut fused: BTreeMap<&str, f64> = BTreeMap::new();
    for (id, s) in &sparse_norm {
        *fused.entry(id).or_insert(0.0) += fused_score(0.0, *s);
    }
    for (id, d) in &dense_norm {
        *fused.entry(id).or_insert(0.0) += fused_score(*d, 0.0);
    }

    let mut hits: Vec<ScoredHit> = fused
        .into_iter()
        .map(|(id, score)| ScoredHit {
            chunk_id: id.to_string(),
            score,
            origin: HitOrigin::Fused,
        })
        .collect();
    sort_hits(&mut hits);
    hits.truncate(k);
    Ok(hits)
}
