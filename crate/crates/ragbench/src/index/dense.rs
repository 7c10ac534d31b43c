//! Dense vector index: exact cosine scan or HNSW approximate search.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, EmbeddingVector};
use crate::corpus::Chunk;
use crate::error::{RagError, Result};

use super::hnsw::HnswGraph;
use super::{sort_hits, HitOrigin, ScoredHit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenseMode {
    Exact,
    Hnsw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 200,
            ef_search: 128,
        }
    }
}

/// One unit vector per chunk, stored in ascending chunk-id order so
/// builds and persisted files are byte-stable.
pub struct DenseIndex {
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    mode: DenseMode,
    params: HnswParams,
    graph: Option<HnswGraph>,
    dim: usize,
}

impl DenseIndex {
    /// Embeds every chunk and, in HNSW mode, constructs the graph with a
    /// seeded level RNG.
    pub fn build(
        chunks: &[Chunk],
        embedder: &Backend,
        mode: DenseMode,
        params: HnswParams,
        seed: u64,
    ) -> Result<DenseIndex> {
        if chunks.is_empty() {
            return Ok(DenseIndex {
                ids: Vec::new(),
                vectors: Vec::new(),
                mode,
                params,
                graph: None,
                dim: 0,
            });
        }
        let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
        let embedded = embedder.embed_batch(&texts)?;
        let mut pairs: Vec<(String, EmbeddingVector)> = chunks
            .iter()
            .map(|c| c.id.clone())
            .zip(embedded)
            .collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        for pair in pairs.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(RagError::Conflict(format!(
                    "duplicate chunk id {:?}",
                    pair[0].0
                )));
            }
        }
        let (ids, vectors): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        Self::from_vectors(ids, vectors, mode, params, seed)
    }

    /// Builds an index from already-computed unit vectors (ids must be
    /// unique; vectors must share one dimension).
    pub fn from_vectors(
        ids: Vec<String>,
        vectors: Vec<EmbeddingVector>,
        mode: DenseMode,
        params: HnswParams,
        seed: u64,
    ) -> Result<DenseIndex> {
        if ids.len() != vectors.len() {
            return Err(RagError::InvalidInput(
                "ids and vectors must have equal length".into(),
            ));
        }
        let dim = vectors.first().map_or(0, |v| v.dim());
        if vectors.iter().any(|v| v.dim() != dim) {
            return Err(RagError::InvalidInput(
                "all vectors must share one dimension".into(),
            ));
        }
        let graph = match mode {
            DenseMode::Hnsw if !vectors.is_empty() => {
                Some(HnswGraph::build(&vectors, params.m, params.ef_construction, seed))
            }
            _ => None,
        };
        Ok(DenseIndex {
            ids,
            vectors,
            mode,
            params,
            graph,
            dim,
        })
    }

    pub(crate) fn from_loaded_parts(
        ids: Vec<String>,
        vectors: Vec<EmbeddingVector>,
        mode: DenseMode,
        params: HnswParams,
        graph: Option<HnswGraph>,
    ) -> DenseIndex {
        let dim = vectors.first().map_or(0, |v| v.dim());
        DenseIndex {
            ids,
            vectors,
            mode,
            params,
            graph,
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> DenseMode {
        self.mode
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub(crate) fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }

    pub(crate) fn graph(&self) -> Option<&HnswGraph> {
        self.graph.as_ref()
    }

    /// Cosine top-`n`. Exact mode scans every vector; HNSW mode searches
    /// the graph with `ef = max(ef_search, n)`.
    pub fn search(&self, query: &EmbeddingVector, n: usize) -> Result<Vec<ScoredHit>> {
        if self.is_empty() || n == 0 {
            return Ok(Vec::new());
        }
        if query.dim() != self.dim {
            return Err(RagError::InvalidInput(format!(
                "query dimension {} does not match index dimension {}",
                query.dim(),
                self.dim
            )));
        }
        let mut hits: Vec<ScoredHit> = match (self.mode, &self.graph) {
            (DenseMode::Hnsw, Some(graph)) => graph
                .search(query, &self.vectors, self.params.ef_search.max(n), n)
                .into_iter()
                .map(|(idx, score)| ScoredHit {
                    chunk_id: self.ids[idx as usize].clone(),
                    score,
                    origin: HitOrigin::Dense,
                })
                .collect(),
            _ => self
                .ids
                .iter()
                .zip(&self.vectors)
                .map(|(id, v)| ScoredHit {
                    chunk_id: id.clone(),
                    score: query.cosine(v),
                    origin: HitOrigin::Dense,
                })
                .collect(),
        };
        sort_hits(&mut hits);
        hits.truncate(n);
        Ok(hits)
    }
}
