//! Retrieval-augmented generation pipeline engine with a
//! configuration-grid benchmark harness.
//!
//! The pipeline runs query classification, query augmentation, top-k
//! retrieval over sparse/dense/hybrid indexes, and prompted generation
//! against pluggable model backends (an OpenAI-compatible HTTP client or
//! a deterministic mock). The harness evaluates whole configuration
//! presets — a tuned pipeline, a no-retrieval baseline, and eleven
//! single-module ablations — over multiple-choice, yes/no/maybe, and
//! entity-extraction tasks, reporting per-task scores, average score,
//! and average latency per query.

pub mod backend;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod generate;
pub mod index;
pub mod qclass;
pub mod retrieve;

pub use backend::{Backend, BackendConfig, BackendKind, EmbeddingVector, GenerationResult};
pub use corpus::{Chunk, ChunkStrategy, ChunkingConfig, Document};
pub use error::{RagError, Result};
pub use eval::{EvalReport, EvalSample, TaskKind};
pub use generate::{GenerationTrace, PipelineConfig, Prompting};
pub use index::{CorpusIndex, DenseIndex, IndexKind, ScoredHit, SparseIndex};
pub use qclass::{ClassifierModel, LabeledQuery, SplitSpec};
pub use retrieve::{Augmentation, RetrievalConfig, RetrievedDoc};
