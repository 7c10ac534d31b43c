//! TOML run configuration.
//!
//! Parsing is strict: unknown keys are rejected so a typo in an
//! ablation setting cannot silently change what a run measures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::backend::{BackendConfig, BackendKind, DEFAULT_BEAM_WIDTH, DEFAULT_EMBED_DIM};
use crate::corpus::{ChunkStrategy, ChunkingConfig, DEFAULT_CHUNK_SIZE};
use crate::error::{RagError, Result};
use crate::generate::{PipelineConfig, PromptTemplates, Prompting, DEFAULT_PROMPT_CHAR_BUDGET};
use crate::index::{DenseMode, IndexKind};
use crate::qclass::SplitSpec;
use crate::retrieve::{Augmentation, RetrievalConfig, DEFAULT_TOP_K};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub paths: PathsSection,
    pub backend: BackendsSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub templates: TemplatesSection,
    #[serde(default)]
    pub split: SplitSection,
}

fn default_seed() -> u64 {
    42
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub corpus: Option<PathBuf>,
    pub index_dir: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    /// JSON Lines `{query, response}` pairs to label.
    pub queries: Option<PathBuf>,
    /// Labeled dataset (output of `label`, input of `train`).
    pub labeled: Option<PathBuf>,
    #[serde(default)]
    pub datasets: DatasetsSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetsSection {
    pub mcq: Option<PathBuf>,
    pub ynm: Option<PathBuf>,
    pub ner: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsSection {
    pub llm: BackendSection,
    pub embedder: Option<BackendSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: String,
    pub model_name: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub max_retries: u32,
    #[serde(default = "default_beam_width")]
    pub beam_width: u32,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    /// Defaults to the top-level seed when omitted.
    pub seed: Option<u64>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default)]
    pub mock_delay_s: f64,
    /// Inline response table (mock only).
    #[serde(default)]
    pub response_table: BTreeMap<String, String>,
    /// JSON file mapping prompt fragments to responses (mock only);
    /// merged over the inline table.
    pub response_table_file: Option<PathBuf>,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_beam_width() -> u32 {
    DEFAULT_BEAM_WIDTH
}

fn default_max_new_tokens() -> u32 {
    256
}

fn default_embed_dim() -> usize {
    DEFAULT_EMBED_DIM
}

impl BackendSection {
    fn resolve(&self, base_dir: &Path, default_seed: u64) -> Result<BackendConfig> {
        let mut response_table = self.response_table.clone();
        if let Some(file) = &self.response_table_file {
            let path = resolve_path(base_dir, file);
            let raw = std::fs::read_to_string(&path)
                .map_err(|e| RagError::io(path.display().to_string(), e))?;
            let loaded: BTreeMap<String, String> = serde_json::from_str(&raw)
                .map_err(|e| RagError::Config(format!("bad response table {path:?}: {e}")))?;
            response_table.extend(loaded);
        }
        let cfg = BackendConfig {
            kind: self.kind,
            endpoint: self.endpoint.clone(),
            model_name: self.model_name.clone(),
            timeout_ms: self.timeout_ms,
            max_retries: self.max_retries,
            beam_width: self.beam_width,
            max_new_tokens: self.max_new_tokens,
            seed: self.seed.unwrap_or(default_seed),
            embed_dim: self.embed_dim,
            mock_delay_s: self.mock_delay_s,
            response_table,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    #[serde(default = "default_strategy")]
    pub chunking_strategy: ChunkStrategy,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    #[serde(default = "default_index_kind")]
    pub index_kind: IndexKind,
    #[serde(default = "default_dense_mode")]
    pub dense_mode: DenseMode,
    #[serde(default = "default_true")]
    pub use_rag: bool,
    #[serde(default = "default_true")]
    pub use_query_classification: bool,
    #[serde(default = "default_augmentation")]
    pub augmentation: Augmentation,
    #[serde(default = "default_prompting")]
    pub prompting: Prompting,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_candidate_factor")]
    pub candidate_factor: usize,
    /// Defaults to `chunking_strategy == small2big`.
    pub expand_small2big: Option<bool>,
    #[serde(default = "default_char_budget")]
    pub prompt_char_budget: usize,
}

fn default_strategy() -> ChunkStrategy {
    ChunkStrategy::Small2big
}

fn default_chunk_size() -> usize {
    DEFAULT_CHUNK_SIZE
}

fn default_index_kind() -> IndexKind {
    IndexKind::Hybrid
}

fn default_dense_mode() -> DenseMode {
    DenseMode::Hnsw
}

fn default_true() -> bool {
    true
}

fn default_augmentation() -> Augmentation {
    Augmentation::PseudoResponse
}

fn default_prompting() -> Prompting {
    Prompting::CotRefine
}

fn default_k() -> usize {
    DEFAULT_TOP_K
}

fn default_candidate_factor() -> usize {
    crate::index::DEFAULT_CANDIDATE_FACTOR
}

fn default_char_budget() -> usize {
    DEFAULT_PROMPT_CHAR_BUDGET
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            chunking_strategy: default_strategy(),
            chunk_size: default_chunk_size(),
            index_kind: default_index_kind(),
            dense_mode: default_dense_mode(),
            use_rag: true,
            use_query_classification: true,
            augmentation: default_augmentation(),
            prompting: default_prompting(),
            k: default_k(),
            candidate_factor: default_candidate_factor(),
            expand_small2big: None,
            prompt_char_budget: default_char_budget(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatesSection {
    pub doc_header: Option<String>,
    pub direct_answer: Option<String>,
    pub cot: Option<String>,
    pub cot_refine: Option<String>,
    pub rewrite: Option<String>,
    pub pseudo_response: Option<String>,
}

impl TemplatesSection {
    pub fn build(&self) -> PromptTemplates {
        let mut t = PromptTemplates::default();
        if let Some(v) = &self.doc_header {
            t.doc_header = v.clone();
        }
        if let Some(v) = &self.direct_answer {
            t.direct_answer = v.clone();
        }
        if let Some(v) = &self.cot {
            t.cot = v.clone();
        }
        if let Some(v) = &self.cot_refine {
            t.cot_refine = v.clone();
        }
        if let Some(v) = &self.rewrite {
            t.rewrite = v.clone();
        }
        if let Some(v) = &self.pseudo_response {
            t.pseudo_response = v.clone();
        }
        t
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train_frac: f64,
    pub dev_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let spec = SplitSpec::default();
        SplitSection {
            train_frac: spec.train_frac,
            dev_frac: spec.dev_frac,
            test_frac: spec.test_frac,
        }
    }
}

/// A parsed config with everything constructed: backends, pipeline,
/// templates, split spec, and absolute-ized paths.
pub struct ResolvedConfig {
    pub seed: u64,
    pub parallelism: usize,
    pub paths: PathsSection,
    pub llm: BackendConfig,
    pub embedder: BackendConfig,
    pub pipeline: PipelineConfig,
    pub dense_mode: DenseMode,
    pub templates: PromptTemplates,
    pub split: SplitSpec,
}

fn resolve_path(base_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<RunConfigFile> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| RagError::io(path.display().to_string(), e))?;
        toml::from_str(&raw).map_err(|e| RagError::Config(format!("{}: {e}", path.display())))
    }

    /// Resolves relative paths against the config file's directory and
    /// builds the concrete configs. CLI `--seed` / `--parallelism`
    /// override the file.
    pub fn resolve(
        self,
        config_path: &Path,
        seed_override: Option<u64>,
        parallelism_override: Option<usize>,
    ) -> Result<ResolvedConfig> {
        let base_dir = config_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let seed = seed_override.unwrap_or(self.seed);
        let parallelism = parallelism_override.unwrap_or(self.parallelism).max(1);

        let mut paths = self.paths.clone();
        for p in [
            &mut paths.corpus,
            &mut paths.index_dir,
            &mut paths.model_dir,
            &mut paths.report_dir,
            &mut paths.queries,
            &mut paths.labeled,
            &mut paths.datasets.mcq,
            &mut paths.datasets.ynm,
            &mut paths.datasets.ner,
        ]
        .into_iter()
        .flatten()
        {
            *p = resolve_path(&base_dir, p);
        }

        let llm = self.backend.llm.resolve(&base_dir, seed)?;
        let embedder = match &self.backend.embedder {
            Some(section) => section.resolve(&base_dir, seed)?,
            None => BackendConfig::mock("bge-base", seed),
        };

        let p = &self.pipeline;
        let chunking = ChunkingConfig::new(p.chunking_strategy, p.chunk_size)?;
        let pipeline = PipelineConfig {
            preset_name: None,
            use_rag: p.use_rag,
            chunking,
            embedder: embedder.clone(),
            use_query_classification: p.use_query_classification,
            prompting: p.prompting,
            retrieval: RetrievalConfig {
                k: p.k.max(1),
                augmentation: p.augmentation,
                index_kind: p.index_kind,
                expand_small2big: p
                    .expand_small2big
                    .unwrap_or(p.chunking_strategy == ChunkStrategy::Small2big),
                candidate_factor: p.candidate_factor.max(1),
            },
            prompt_char_budget: p.prompt_char_budget,
        };

        let split = SplitSpec::new(
            self.split.train_frac,
            self.split.dev_frac,
            self.split.test_frac,
            seed,
        )?;

        Ok(ResolvedConfig {
            seed,
            parallelism,
            paths,
            llm,
            embedder,
            pipeline,
            dense_mode: p.dense_mode,
            templates: self.templates.build(),
            split,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[backend.llm]
kind = "mock"
model_name = "mock-llm"
"#;

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let cfg: RunConfigFile = toml::from_str(MINIMAL).unwrap();
        let resolved = cfg
            .resolve(Path::new("/tmp/config.toml"), None, None)
            .unwrap();
        assert_eq!(resolved.seed, 42);
        assert_eq!(resolved.pipeline.retrieval.k, 8);
        assert_eq!(resolved.pipeline.chunking.chunk_size, 256);
        assert!(resolved.pipeline.retrieval.expand_small2big);
        assert_eq!(resolved.embedder.model_name, "bge-base");
        assert_eq!(resolved.llm.seed, 42);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{MINIMAL}\nchunk_sizee = 17\n");
        assert!(toml::from_str::<RunConfigFile>(&bad).is_err());
        let bad_nested = r#"
[backend.llm]
kind = "mock"
model_name = "m"
beem_width = 3
"#;
        assert!(toml::from_str::<RunConfigFile>(bad_nested).is_err());
    }

    #[test]
    fn overrides_beat_file_values() {
        let cfg: RunConfigFile = toml::from_str(MINIMAL).unwrap();
        let resolved = cfg
            .resolve(Path::new("/tmp/config.toml"), Some(7), Some(2))
            .unwrap();
        assert_eq!(resolved.seed, 7);
        assert_eq!(resolved.parallelism, 2);
        assert_eq!(resolved.llm.seed, 7);
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let toml_src = r#"
[paths]
corpus = "data/corpus.jsonl"

[backend.llm]
kind = "mock"
model_name = "m"
"#;
        let cfg: RunConfigFile = toml::from_str(toml_src).unwrap();
        let resolved = cfg
            .resolve(Path::new("/work/run/config.toml"), None, None)
            .unwrap();
        assert_eq!(
            resolved.paths.corpus.unwrap(),
            PathBuf::from("/work/run/data/corpus.jsonl")
        );
    }

    #[test]
    fn pipeline_section_controls_retrieval() {
        let toml_src = r#"
[backend.llm]
kind = "mock"
model_name = "m"

[pipeline]
chunking_strategy = "vanilla"
index_kind = "sparse"
augmentation = "vanilla"
prompting = "direct_answer"
k = 3
"#;
        let cfg: RunConfigFile = toml::from_str(toml_src).unwrap();
        let resolved = cfg.resolve(Path::new("c.toml"), None, None).unwrap();
        assert_eq!(resolved.pipeline.retrieval.k, 3);
        assert_eq!(resolved.pipeline.index_kind(), IndexKind::Sparse);
        assert!(!resolved.pipeline.retrieval.expand_small2big);
        assert_eq!(resolved.pipeline.prompting, Prompting::DirectAnswer);
    }
}
