//! Corpus indexes: sparse inverted index with BM25 scoring, dense vector
//! index (exact and HNSW), and hybrid fusion of the two.

mod dense;
mod fusion;
mod hnsw;
mod persist;
mod sparse;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::corpus::Chunk;
use crate::error::{RagError, Result};

pub use dense::{DenseIndex, DenseMode, HnswParams};
pub use fusion::{hybrid_search, DEFAULT_CANDIDATE_FACTOR, HYBRID_DENSE_WEIGHT, HYBRID_SPARSE_WEIGHT};
pub use persist::{load_dense, load_sparse, save_dense, save_sparse};
pub use sparse::{build_sparse, SparseIndex, BM25_B, BM25_K1};

/// Which index family serves retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum IndexKind {
    Sparse,
    Dense,
    Hybrid,
}

impl IndexKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IndexKind::Sparse => "sparse",
            IndexKind::Dense => "dense",
            IndexKind::Hybrid => "hybrid",
        }
    }

    pub fn needs_sparse(self) -> bool {
        matches!(self, IndexKind::Sparse | IndexKind::Hybrid)
    }

    pub fn needs_dense(self) -> bool {
        matches!(self, IndexKind::Dense | IndexKind::Hybrid)
    }
}

/// Where a hit's score came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitOrigin {
    Sparse,
    Dense,
    Fused,
}

/// One scored search result. Hit lists are sorted by descending score
/// with ties broken by ascending chunk id, so every search is
/// reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredHit {
    pub chunk_id: String,
    pub score: f64,
    pub origin: HitOrigin,
}

pub(crate) fn sort_hits(hits: &mut [ScoredHit]) {
    hits.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
}

/// Everything retrieval needs for one corpus build: the requested
/// indexes, the indexed chunks, and (under small2big) the parent chunks
/// generation receives.
pub struct CorpusIndex {
    pub sparse: Option<SparseIndex>,
    pub dense: Option<DenseIndex>,
    pub chunks: BTreeMap<String, Chunk>,
    pub parents: BTreeMap<String, Chunk>,
}

impl CorpusIndex {
    /// Builds the indexes required by `kind` over `chunks`. The embedder
    /// is only consulted when a dense index is needed.
    pub fn build(
        chunks: Vec<Chunk>,
        parents: Vec<Chunk>,
        kind: IndexKind,
        embedder: Option<&Backend>,
        hnsw: Option<HnswParams>,
        dense_mode: DenseMode,
        seed: u64,
    ) -> Result<CorpusIndex> {
        let sparse = if kind.needs_sparse() {
            Some(build_sparse(&chunks)?)
        } else {
            None
        };
        let dense = if kind.needs_dense() {
            let embedder = embedder.ok_or_else(|| {
                RagError::Config(format!(
                    "index kind {:?} needs an embedding backend",
                    kind.as_str()
                ))
            })?;
            Some(DenseIndex::build(
                &chunks,
                embedder,
                dense_mode,
                hnsw.unwrap_or_default(),
                seed,
            )?)
        } else {
            None
        };
        let mut chunk_map = BTreeMap::new();
        for c in chunks {
            if chunk_map.insert(c.id.clone(), c).is_some() {
                return Err(RagError::Conflict("duplicate chunk id in corpus".into()));
            }
        }
        let mut parent_map = BTreeMap::new();
        for p in parents {
            parent_map.insert(p.id.clone(), p);
        }
        Ok(CorpusIndex {
            sparse,
            dense,
            chunks: chunk_map,
            parents: parent_map,
        })
    }
}
