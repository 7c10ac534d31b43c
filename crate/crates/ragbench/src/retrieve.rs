//! Query augmentation and top-k retrieval, including small2big parent
//! expansion.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{RagError, Result};
use crate::generate::PromptTemplates;
use crate::index::{hybrid_search, CorpusIndex, IndexKind, ScoredHit};

/// How the search text is derived from the user query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum Augmentation {
    /// The query itself is the search input.
    Vanilla,
    /// The model rewrites the query into focused sub-questions.
    Rewrite,
    /// The model drafts a tentative answer that is appended to the query.
    PseudoResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    pub augmentation: Augmentation,
    pub index_kind: IndexKind,
    pub expand_small2big: bool,
    pub candidate_factor: usize,
}

pub const DEFAULT_TOP_K: usize = 8;

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: DEFAULT_TOP_K,
            augmentation: Augmentation::PseudoResponse,
            index_kind: IndexKind::Hybrid,
            expand_small2big: true,
            candidate_factor: crate::index::DEFAULT_CANDIDATE_FACTOR,
        }
    }
}

/// One retrieved context unit handed to generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub chunk_id: String,
    pub text: String,
    pub score: f64,
    pub rank: usize,
}

/// Builds the search text for a query. Backend failures degrade to the
/// vanilla query with a warning instead of aborting retrieval.
pub fn augment_query(
    query: &str,
    strategy: Augmentation,
    llm: &Backend,
    templates: &PromptTemplates,
) -> Result<(String, Vec<String>)> {
    if query.is_empty() {
        return Err(RagError::InvalidInput("query must be non-empty".into()));
    }
    let (template, label) = match strategy {
        Augmentation::Vanilla => return Ok((query.to_string(), Vec::new())),
        Augmentation::Rewrite => (&templates.rewrite, "query rewriting"),
        Augmentation::PseudoResponse => (&templates.pseudo_response, "pseudo-response generation"),
    };
    let prompt = template.replace("{query}", query);
    match llm.generate(&prompt) {
        Ok(result) => {
            let extra = result.text.trim();
            if extra.is_empty() {
                Ok((query.to_string(), Vec::new()))
            } else {
                Ok((format!("{query}\n{extra}"), Vec::new()))
            }
        }
        Err(e) => Ok((
            query.to_string(),
            vec![format!("{label} failed, fell back to vanilla query: {e}")],
        )),
    }
}

fn raw_search(
    search_text: &str,
    cfg: &RetrievalConfig,
    index: &CorpusIndex,
    embedder: Option<&Backend>,
    n: usize,
) -> Result<Vec<ScoredHit>> {
    let need_embedding = cfg.index_kind.needs_dense();
    let query_vec = if need_embedding {
        let embedder = embedder.ok_or_else(|| {
            RagError::Config(format!(
                "{} retrieval requires an embedding backend",
                cfg.index_kind.as_str()
            ))
        })?;
        Some(embedder.embed_batch(&[search_text])?.remove(0))
    } else {
        None
    };
    match cfg.index_kind {
        IndexKind::Sparse => {
            let sparse = index
                .sparse
                .as_ref()
                .ok_or_else(|| RagError::Config("sparse index not built".into()))?;
            sparse.bm25_search(search_text, n)
        }
        IndexKind::Dense => {
            let dense = index
                .dense
                .as_ref()
                .ok_or_else(|| RagError::Config("dense index not built".into()))?;
            dense.search(query_vec.as_ref().unwrap(), n)
        }
        IndexKind::Hybrid => {
            let sparse = index
                .sparse
                .as_ref()
                .ok_or_else(|| RagError::Config("sparse index not built".into()))?;
            let dense = index
                .dense
                .as_ref()
                .ok_or_else(|| RagError::Config("dense index not built".into()))?;
            hybrid_search(
                search_text,
                query_vec.as_ref().unwrap(),
                sparse,
                dense,
                n,
                cfg.candidate_factor,
            )
        }
    }
}

/// Top-k retrieval over the configured indexes.
///
/// Under small2big expansion each small-chunk hit is mapped to its
/// parent large chunk; parents are deduplicated keeping the maximum
/// child score, and the returned text is the parent's text — what
/// generation will actually see.
pub fn retrieve(
    search_text: &str,
    cfg: &RetrievalConfig,
    index: &CorpusIndex,
    embedder: Option<&Backend>,
) -> Result<Vec<RetrievedDoc>> {
    if cfg.k == 0 {
        return Err(RagError::InvalidInput("k must be >= 1".into()));
    }
    // Fetch extra children before parent dedup so k distinct parents
    // remain reachable.
    let n_raw = if cfg.expand_small2big {
        cfg.k * cfg.candidate_factor.max(1)
    } else {
        cfg.k
    };
    let hits = raw_search(search_text, cfg, index, embedder, n_raw)?;

    let scored: Vec<(String, f64)> = if cfg.expand_small2big {
        let mut best: BTreeMap<String, f64> = BTreeMap::new();
        for hit in &hits {
            let chunk = index.chunks.get(&hit.chunk_id).ok_or_else(|| {
                RagError::DataIntegrity(format!("hit {:?} not in chunk store", hit.chunk_id))
            })?;
            let parent_id = chunk.parent_id.as_ref().ok_or_else(|| {
                RagError::DataIntegrity(format!(
                    "chunk {:?} has no parent link under small2big expansion",
                    chunk.id
                ))
            })?;
            if !index.parents.contains_key(parent_id) {
                return Err(RagError::DataIntegrity(format!(
                    "parent chunk {parent_id:?} missing from store"
                )));
            }
            let entry = best.entry(parent_id.clone()).or_insert(f64::NEG_INFINITY);
            if hit.score > *entry {
                *entry = hit.score;
            }
        }
        let mut parents: Vec<(String, f64)> = best.into_iter().collect();
        parents.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        parents.truncate(cfg.k);
        parents
    } else {
        hits.into_iter()
            .take(cfg.k)
            .map(|h| (h.chunk_id, h.score))
            .collect()
    };

    scored
        .into_iter()
        .enumerate()
        .map(|(i, (chunk_id, score))| {
            let text = if cfg.expand_small2big {
                index.parents[&chunk_id].text.clone()
            } else {
                index
                    .chunks
                    .get(&chunk_id)
                    .ok_or_else(|| {
                        RagError::DataIntegrity(format!("hit {chunk_id:?} not in chunk store"))
                    })?
                    .text
                    .clone()
            };
            Ok(RetrievedDoc {
                chunk_id,
                text,
                score,
                rank: i + 1,
            })
        })
        .collect()
}
