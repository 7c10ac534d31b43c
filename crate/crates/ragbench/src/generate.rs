//! Prompt assembly for the three prompting strategies and end-to-end
//! pipeline orchestration: classify -> augment -> retrieve -> prompt ->
//! generate, with latency accounting.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendConfig};
use crate::corpus::ChunkingConfig;
use crate::error::{RagError, Result};
use crate::index::CorpusIndex;
use crate::qclass::{classify, ClassifierModel};
use crate::retrieve::{augment_query, retrieve, RetrievalConfig, RetrievedDoc};

/// How the final response is prompted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum Prompting {
    /// Ask for the final answer only.
    DirectAnswer,
    /// Ask for step-by-step reasoning before the answer.
    Cot,
    /// Generate a no-retrieval draft first, then ask the model to revise
    /// it against the retrieved documents.
    CotRefine,
}

/// Prompt templates; `{query}`, `{docs}`, `{prior}`, `{rank}`, and
/// `{text}` are substituted. Defaults are overridable via the config
/// file's `[templates]` section.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub doc_header: String,
    pub direct_answer: String,
    pub cot: String,
    pub cot_refine: String,
    pub rewrite: String,
    pub pseudo_response: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            doc_header: "[{rank}] {text}\n".into(),
            direct_answer:
                "{docs}Answer the question directly with only the final answer.\nQuestion: {query}\nAnswer:"
                    .into(),
            cot:
                "{docs}Think step by step, show intermediate reasoning, then give the final answer.\nQuestion: {query}\nReasoning:"
                    .into(),
            cot_refine:
                "{docs}Your previous answer was:\n{prior}\nReflect on this answer, use the documents above to correct any errors, and write an improved final answer.\nQuestion: {query}\nImproved answer:"
                    .into(),
            rewrite:
                "Rewrite the question into 1-3 focused sub-questions for a search engine, one per line.\nQuestion: {query}\nSub-questions:"
                    .into(),
            pseudo_response:
                "Answer the question briefly using your own knowledge.\nQuestion: {query}\nAnswer:"
                    .into(),
        }
    }
}

/// Renders retrieved documents as numbered blocks, in rank order.
pub fn render_docs(docs: &[RetrievedDoc], templates: &PromptTemplates) -> String {
    docs.iter()
        .map(|d| {
            templates
                .doc_header
                .replace("{rank}", &d.rank.to_string())
                .replace("{text}", &d.text)
        })
        .collect()
}

/// Assembles the prompt for one strategy: document blocks first, then
/// the strategy instruction and the query.
pub fn build_prompt(
    query: &str,
    docs: &[RetrievedDoc],
    strategy: Prompting,
    prior_response: Option<&str>,
    templates: &PromptTemplates,
) -> Result<String> {
    let rendered = render_docs(docs, templates);
    let prompt = match strategy {
        Prompting::DirectAnswer => templates.direct_answer.replace("{docs}", &rendered),
        Prompting::Cot => templates.cot.replace("{docs}", &rendered),
        Prompting::CotRefine => {
            let prior = prior_response.ok_or_else(|| {
                RagError::InvalidInput(
                    "cot_refine prompting requires a prior response".into(),
                )
            })?;
            templates
                .cot_refine
                .replace("{docs}", &rendered)
                .replace("{prior}", prior)
        }
    };
    Ok(prompt.replace("{query}", query))
}

pub const DEFAULT_PROMPT_CHAR_BUDGET: usize = 24_000;

/// One full pipeline configuration; presets map one-to-one onto the
/// benchmark grid rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub preset_name: Option<String>,
    /// When false the pipeline never retrieves (the no-RAG baseline).
    pub use_rag: bool,
    pub chunking: ChunkingConfig,
    pub embedder: BackendConfig,
    pub use_query_classification: bool,
    pub prompting: Prompting,
    pub retrieval: RetrievalConfig,
    pub prompt_char_budget: usize,
}

impl PipelineConfig {
    pub fn augmentation(&self) -> crate::retrieve::Augmentation {
        self.retrieval.augmentation
    }

    pub fn index_kind(&self) -> crate::index::IndexKind {
        self.retrieval.index_kind
    }
}

/// Everything a query answer needs, shared read-only across queries.
pub struct PipelineComponents<'a> {
    pub llm: &'a Backend,
    pub embedder: Option<&'a Backend>,
    pub index: Option<&'a CorpusIndex>,
    pub classifier: Option<&'a ClassifierModel>,
    pub templates: &'a PromptTemplates,
}

/// Full record of one answered query.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub classified_need_rag: Option<bool>,
    pub search_text: String,
    pub retrieved: Vec<RetrievedDoc>,
    /// First-pass draft; present exactly when cot_refine ran the RAG path.
    pub no_rag_response: Option<String>,
    pub final_response: String,
    pub latency_s: f64,
    pub warnings: Vec<String>,
}

/// Generate calls `answer_query` makes for a config: one per pseudo-
/// response or rewrite augmentation, plus two for cot_refine (draft +
/// refinement) or one otherwise; the classification bypass path always
/// makes exactly one.
pub fn expected_generate_calls(cfg: &PipelineConfig, rag_path: bool) -> u64 {
    if !rag_path {
        return 1;
    }
    let augmentation_calls = match cfg.retrieval.augmentation {
        crate::retrieve::Augmentation::Vanilla => 0,
        crate::retrieve::Augmentation::Rewrite
        | crate::retrieve::Augmentation::PseudoResponse => 1,
    };
    let generation_calls = match cfg.prompting {
        Prompting::CotRefine => 2,
        _ => 1,
    };
    augmentation_calls + generation_calls
}

/// Drops lowest-ranked documents until the prompt fits the character
/// budget.
fn budgeted_prompt(
    query: &str,
    docs: &[RetrievedDoc],
    strategy: Prompting,
    prior: Option<&str>,
    templates: &PromptTemplates,
    budget: usize,
) -> Result<(String, usize)> {
    let mut keep = docs.len();
    loop {
        let prompt = build_prompt(query, &docs[..keep], strategy, prior, templates)?;
        if keep == 0 || prompt.chars().count() <= budget {
            return Ok((prompt, keep));
        }
        keep -= 1;
    }
}

/// Answers one query end to end and returns the full trace.
///
/// With classification enabled, queries the classifier routes away from
/// retrieval are answered directly from the no-context template
/// (cot_refine degenerates to cot there: no prior exists to refine).
pub fn answer_query(
    query: &str,
    cfg: &PipelineConfig,
    components: &PipelineComponents,
) -> Result<GenerationTrace> {
    if query.is_empty() {
        return Err(RagError::InvalidInput("query must be non-empty".into()));
    }
    let start = Instant::now();
    let mut trace = GenerationTrace {
        search_text: query.to_string(),
        ..GenerationTrace::default()
    };

    let fail = |mut trace: GenerationTrace, start: Instant, message: String| {
        trace.latency_s = start.elapsed().as_secs_f64();
        RagError::Pipeline {
            message,
            trace: Box::new(trace),
        }
    };

    if cfg.use_rag && cfg.use_query_classification {
        let model = components.classifier.ok_or_else(|| {
            RagError::Config("query classification enabled but no classifier loaded".into())
        })?;
        let embedder = components.embedder.ok_or_else(|| {
            RagError::Config("query classification requires an embedding backend".into())
        })?;
        let (need_rag, _prob) = match classify(model, query, embedder) {
            Ok(v) => v,
            Err(e) => return Err(fail(trace, start, format!("query classification: {e}"))),
        };
        trace.classified_need_rag = Some(need_rag);
    }

    let rag_path = cfg.use_rag && trace.classified_need_rag.unwrap_or(true);

    if !rag_path {
        let strategy = match cfg.prompting {
            Prompting::CotRefine => Prompting::Cot,
            other => other,
        };
        let prompt = build_prompt(query, &[], strategy, None, components.templates)?;
        match components.llm.generate(&prompt) {
            Ok(result) => trace.final_response = result.text,
            Err(e) => return Err(fail(trace, start, format!("generation: {e}"))),
        }
        trace.latency_s = start.elapsed().as_secs_f64();
        return Ok(trace);
    }

    let (search_text, warnings) = augment_query(
        query,
        cfg.retrieval.augmentation,
        components.llm,
        components.templates,
    )?;
    trace.search_text = search_text;
    trace.warnings = warnings;

    let index = components
        .index
        .ok_or_else(|| RagError::Config("retrieval requires a built index".into()))?;
    trace.retrieved = match retrieve(
        &trace.search_text,
        &cfg.retrieval,
        index,
        components.embedder,
    ) {
        Ok(docs) => docs,
        Err(e) => return Err(fail(trace, start, format!("retrieval: {e}"))),
    };

    let prior = if cfg.prompting == Prompting::CotRefine {
        let draft_prompt = build_prompt(query, &[], Prompting::Cot, None, components.templates)?;
        match components.llm.generate(&draft_prompt) {
            Ok(result) => {
                trace.no_rag_response = Some(result.text.clone());
                Some(result.text)
            }
            Err(e) => return Err(fail(trace, start, format!("draft generation: {e}"))),
        }
    } else {
        None
    };

    let (prompt, kept) = budgeted_prompt(
        query,
        &trace.retrieved,
        cfg.prompting,
        prior.as_deref(),
        components.templates,
        cfg.prompt_char_budget,
    )?;
    if kept < trace.retrieved.len() {
        trace.warnings.push(format!(
            "prompt over {} chars: dropped {} lowest-ranked document(s)",
            cfg.prompt_char_budget,
            trace.retrieved.len() - kept
        ));
    }
    match components.llm.generate(&prompt) {
        Ok(result) => trace.final_response = result.text,
        Err(e) => return Err(fail(trace, start, format!("generation: {e}"))),
    }
    trace.latency_s = start.elapsed().as_secs_f64();
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::BackendKind;
    use crate::corpus::{tokenize_count, Chunk, ChunkStrategy};
    use crate::index::{DenseMode, HnswParams, IndexKind};
    use crate::retrieve::Augmentation;

    fn docs(n: usize) -> Vec<RetrievedDoc> {
        (0..n)
            .map(|i| RetrievedDoc {
                chunk_id: format!("c{i}"),
                text: format!("doc text {i}"),
                score: 1.0 - i as f64 * 0.1,
                rank: i + 1,
            })
            .collect()
    }

    #[test]
    fn direct_answer_without_docs_has_no_blocks() {
        let t = PromptTemplates::default();
        let p = build_prompt("What is gout?", &[], Prompting::DirectAnswer, None, &t).unwrap();
        assert!(!p.contains("[1]"));
        assert!(p.contains("Answer the question directly"));
        assert!(p.contains("Question: What is gout?"));
    }

    #[test]
    fn cot_doc_blocks_precede_instruction_in_rank_order() {
        let t = PromptTemplates::default();
        let p = build_prompt("q", &docs(2), Prompting::Cot, None, &t).unwrap();
        let b1 = p.find("[1] doc text 0").unwrap();
        let b2 = p.find("[2] doc text 1").unwrap();
        let instr = p.find("Think step by step").unwrap();
        assert!(b1 < b2 && b2 < instr);
    }

    #[test]
    fn cot_refine_embeds_prior_verbatim() {
        let t = PromptTemplates::default();
        let p = build_prompt("q", &docs(1), Prompting::CotRefine, Some("Answer: B"), &t).unwrap();
        assert!(p.contains("Your previous answer was:\nAnswer: B"));
    }

    #[test]
    fn cot_refine_without_prior_is_invalid() {
        let t = PromptTemplates::default();
        assert!(matches!(
            build_prompt("q", &docs(1), Prompting::CotRefine, None, &t),
            Err(RagError::InvalidInput(_))
        ));
    }

    fn test_corpus_index(embedder: &Backend) -> CorpusIndex {
        let chunks: Vec<Chunk> = [
            "uric acid causes gout flares",
            "colchicine treats gout",
            "completely unrelated weather",
        ]
        .iter()
        .enumerate()
        .map(|(i, t)| Chunk {
            id: format!("c{i}"),
            doc_id: "d".into(),
            seq_no: i,
            text: t.to_string(),
            token_count: tokenize_count(t),
            parent_id: None,
            strategy: ChunkStrategy::Vanilla,
        })
        .collect();
        CorpusIndex::build(
            chunks,
            Vec::new(),
            IndexKind::Hybrid,
            Some(embedder),
            Some(HnswParams::default()),
            DenseMode::Exact,
            0,
        )
        .unwrap()
    }

    fn pipeline_cfg(
        prompting: Prompting,
        augmentation: Augmentation,
        use_classification: bool,
    ) -> PipelineConfig {
        PipelineConfig {
            preset_name: None,
            use_rag: true,
            chunking: ChunkingConfig::default(),
            embedder: BackendConfig::mock("embedder", 2),
            use_query_classification: use_classification,
            prompting,
            retrieval: RetrievalConfig {
                k: 2,
                augmentation,
                index_kind: IndexKind::Hybrid,
                expand_small2big: false,
                candidate_factor: 4,
            },
            prompt_char_budget: DEFAULT_PROMPT_CHAR_BUDGET,
        }
    }

    struct Rig {
        llm: Backend,
        embedder: Backend,
        templates: PromptTemplates,
    }

    impl Rig {
        fn new(delay_s: f64) -> Rig {
            let mut llm_cfg = BackendConfig::mock("llm", 1);
            llm_cfg.mock_delay_s = delay_s;
            Rig {
                llm: Backend::new(&llm_cfg).unwrap(),
                embedder: Backend::new(&BackendConfig::mock("embedder", 2)).unwrap(),
                templates: PromptTemplates::default(),
            }
        }
    }

    #[test]
    fn rag_path_populates_trace() {
        let rig = Rig::new(0.0);
        let index = test_corpus_index(&rig.embedder);
        let comps = PipelineComponents {
            llm: &rig.llm,
            embedder: Some(&rig.embedder),
            index: Some(&index),
            classifier: None,
            templates: &rig.templates,
        };
        let cfg = pipeline_cfg(Prompting::Cot, Augmentation::Vanilla, false);
        let trace = answer_query("what treats gout", &cfg, &comps).unwrap();
        assert!(trace.classified_need_rag.is_none());
        assert_eq!(trace.search_text, "what treats gout");
        assert!(!trace.retrieved.is_empty());
        assert!(trace.no_rag_response.is_none());
        assert!(!trace.final_response.is_empty());
        assert!(trace.latency_s >= 0.0);
    }

    #[test]
    fn bypass_path_skips_retrieval() {
        let rig = Rig::new(0.0);
        let index = test_corpus_index(&rig.embedder);
        // Classifier with a hugely negative bias rejects every query.
        let reject_all = ClassifierModel {
            dim: 64,
            weights: vec![0.0; 64],
            bias: -100.0,
            threshold: 0.5,
        };
        let comps = PipelineComponents {
            llm: &rig.llm,
            embedder: Some(&rig.embedder),
            index: Some(&index),
            classifier: Some(&reject_all),
            templates: &rig.templates,
        };
        let cfg = pipeline_cfg(Prompting::CotRefine, Augmentation::PseudoResponse, true);
        let before = rig.llm.generate_calls();
        let trace = answer_query("what treats gout", &cfg, &comps).unwrap();
        assert_eq!(trace.classified_need_rag, Some(false));
        assert!(trace.retrieved.is_empty());
        assert_eq!(trace.search_text, "what treats gout");
        assert!(trace.no_rag_response.is_none());
        assert_eq!(rig.llm.generate_calls() - before, 1);
    }

    #[test]
    fn call_count_contract_by_strategy() {
        let rig = Rig::new(0.0);
        let index = test_corpus_index(&rig.embedder);
        let comps = PipelineComponents {
            llm: &rig.llm,
            embedder: Some(&rig.embedder),
            index: Some(&index),
            classifier: None,
            templates: &rig.templates,
        };
        let cases = [
            (Prompting::DirectAnswer, Augmentation::Vanilla, 1),
            (Prompting::Cot, Augmentation::Vanilla, 1),
            (Prompting::CotRefine, Augmentation::Vanilla, 2),
            (Prompting::DirectAnswer, Augmentation::PseudoResponse, 2),
            (Prompting::CotRefine, Augmentation::PseudoResponse, 3),
            (Prompting::CotRefine, Augmentation::Rewrite, 3),
        ];
        for (prompting, augmentation, expected) in cases {
            let cfg = pipeline_cfg(prompting, augmentation, false);
            assert_eq!(expected_generate_calls(&cfg, true), expected);
            let before = rig.llm.generate_calls();
            answer_query("question about gout", &cfg, &comps).unwrap();
            assert_eq!(
                rig.llm.generate_calls() - before,
                expected,
                "{prompting:?}/{augmentation:?}"
            );
        }
    }

    #[test]
    fn cot_refine_records_draft() {
        let rig = Rig::new(0.0);
        let index = test_corpus_index(&rig.embedder);
        let comps = PipelineComponents {
            llm: &rig.llm,
            embedder: Some(&rig.embedder),
            index: Some(&index),
            classifier: None,
            templates: &rig.templates,
        };
        let cfg = pipeline_cfg(Prompting::CotRefine, Augmentation::Vanilla, false);
        let trace = answer_query("gout treatment", &cfg, &comps).unwrap();
        assert!(trace.no_rag_response.is_some());
    }

    #[test]
    fn latency_covers_injected_delays() {
        let rig = Rig::new(0.005);
        let index = test_corpus_index(&rig.embedder);
        let comps = PipelineComponents {
            llm: &rig.llm,
            embedder: Some(&rig.embedder),
            index: Some(&index),
            classifier: None,
            templates: &rig.templates,
        };
        let cfg = pipeline_cfg(Prompting::CotRefine, Augmentation::PseudoResponse, false);
        let trace = answer_query("gout treatment", &cfg, &comps).unwrap();
        // three generate calls at >= 5 ms each
        assert!(trace.latency_s >= 0.015, "latency {}", trace.latency_s);
    }

    #[test]
    fn traces_are_deterministic_apart_from_latency() {
        let rig = Rig::new(0.0);
        let index = test_corpus_index(&rig.embedder);
        let comps = PipelineComponents {
            llm: &rig.llm,
            embedder: Some(&rig.embedder),
            index: Some(&index),
            classifier: None,
            templates: &rig.templates,
        };
        let cfg = pipeline_cfg(Prompting::CotRefine, Augmentation::PseudoResponse, false);
        let a = answer_query("gout treatment", &cfg, &comps).unwrap();
        let b = answer_query("gout treatment", &cfg, &comps).unwrap();
        assert_eq!(a.final_response, b.final_response);
        assert_eq!(a.search_text, b.search_text);
        assert_eq!(a.no_rag_response, b.no_rag_response);
        let ids_a: Vec<_> = a.retrieved.iter().map(|d| &d.chunk_id).collect();
        let ids_b: Vec<_> = b.retrieved.iter().map(|d| &d.chunk_id).collect();
        assert_eq!(ids_a, ids_b);
    }

    #[test]
    fn char_budget_drops_lowest_ranked_docs() {
        let rig = Rig::new(0.0);
        let index = test_corpus_index(&rig.embedder);
        let comps = PipelineComponents {
            llm: &rig.llm,
            embedder: Some(&rig.embedder),
            index: Some(&index),
            classifier: None,
            templates: &rig.templates,
        };
        let mut cfg = pipeline_cfg(Prompting::DirectAnswer, Augmentation::Vanilla, false);
        cfg.prompt_char_budget = 120;
        let trace = answer_query("gout uric acid", &cfg, &comps).unwrap();
        assert!(trace.warnings.iter().any(|w| w.contains("dropped")));
    }

    #[test]
    fn generation_failure_carries_partial_trace() {
        let dead_cfg = BackendConfig {
            kind: BackendKind::Http,
            endpoint: "http://127.0.0.1:1".into(),
            timeout_ms: 200,
            ..BackendConfig::mock("llm", 1)
        };
        let dead = Backend::new(&dead_cfg).unwrap();
        let embedder = Backend::new(&BackendConfig::mock("embedder", 2)).unwrap();
        let index = test_corpus_index(&embedder);
        let templates = PromptTemplates::default();
        let comps = PipelineComponents {
            llm: &dead,
            embedder: Some(&embedder),
            index: Some(&index),
            classifier: None,
            templates: &templates,
        };
        let cfg = pipeline_cfg(Prompting::Cot, Augmentation::Vanilla, false);
        match answer_query("gout", &cfg, &comps) {
            Err(RagError::Pipeline { trace, .. }) => {
                assert!(!trace.retrieved.is_empty());
                assert!(trace.final_response.is_empty());
            }
            other => panic!("expected pipeline error, got {other:?}"),
        }
    }
}
