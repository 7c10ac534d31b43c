//! Benchmark grid: the preset catalog (one tuned pipeline, a
//! no-retrieval baseline, and eleven single-module ablations), shared
//! index construction, bounded-parallel evaluation, and report output.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use crate::backend::{Backend, BackendConfig};
use crate::corpus::{chunk_document, ChunkStrategy, ChunkingConfig, Document};
use crate::error::{RagError, Result};
use crate::generate::{
    answer_query, PipelineComponents, PipelineConfig, PromptTemplates, Prompting,
    DEFAULT_PROMPT_CHAR_BUDGET,
};
use crate::index::{CorpusIndex, DenseMode, HnswParams, IndexKind};
use crate::qclass::ClassifierModel;
use crate::retrieve::{Augmentation, RetrievalConfig, DEFAULT_TOP_K};

use super::{
    accuracy, micro_f1, parse_mcq_answer, parse_ner_json, parse_ynm, render_task_query, round1,
    EvalReport, EvalSample, GoldAnswer, TaskKind,
};

/// The thirteen benchmark rows: the tuned pipeline, the no-retrieval
/// baseline, and one ablation per module choice.
pub const EVAL_PRESET_NAMES: [&str; 13] = [
    "BP-RAG", "No-RAG", "RAG_1", "RAG_2", "RAG_3", "RAG_4", "RAG_5", "RAG_6", "RAG_7", "RAG_8",
    "RAG_9", "RAG_10", "RAG_11",
];

/// Short description of what each preset changes, for the report table.
pub fn preset_setting(name: &str) -> &'static str {
    match canonical(name).as_str() {
        "bp_rag" => "BP-RAG",
        "no_rag" => "-",
        "rag_1" => "+ vanilla chunking",
        "rag_2" => "+ sliding-window chunking",
        "rag_3" => "+ sparse indexing",
        "rag_4" => "+ dense indexing",
        "rag_5" => "+ medcpt embedder",
        "rag_6" => "+ gte-base embedder",
        "rag_7" => "- query classification",
        "rag_8" => "+ query rewriting",
        "rag_9" => "+ vanilla query",
        "rag_10" => "+ cot prompting",
        "rag_11" => "+ direct answering",
        _ => "?",
    }
}

fn canonical(name: &str) -> String {
    name.to_lowercase().replace(['-', ' '], "_")
}

/// Plumbing shared by every preset: sizes, budgets, and the embedder
/// settings the presets vary only by model name.
#[derive(Debug, Clone)]
pub struct PresetPlumbing {
    pub chunk_size: usize,
    pub k: usize,
    pub candidate_factor: usize,
    pub prompt_char_budget: usize,
    pub embedder_base: BackendConfig,
}

impl Default for PresetPlumbing {
    fn default() -> Self {
        PresetPlumbing {
            chunk_size: crate::corpus::DEFAULT_CHUNK_SIZE,
            k: DEFAULT_TOP_K,
            candidate_factor: crate::index::DEFAULT_CANDIDATE_FACTOR,
            prompt_char_budget: DEFAULT_PROMPT_CHAR_BUDGET,
            embedder_base: BackendConfig::mock("bge-base", 0),
        }
    }
}

/// Builds one preset's pipeline configuration.
///
/// The tuned pipeline uses small2big chunking, hybrid indexing, the
/// bge-base embedder, query classification, pseudo-response
/// augmentation, and cot_refine prompting; each ablation substitutes
/// exactly one of those choices.
pub fn preset_config(name: &str, plumbing: &PresetPlumbing) -> Result<PipelineConfig> {
    let mut embedder = plumbing.embedder_base.clone();
    embedder.model_name = "bge-base".to_string();
    let mut cfg = PipelineConfig {
        preset_name: Some("BP-RAG".to_string()),
        use_rag: true,
        chunking: ChunkingConfig::new(ChunkStrategy::Small2big, plumbing.chunk_size)?,
        embedder,
        use_query_classification: true,
        prompting: Prompting::CotRefine,
        retrieval: RetrievalConfig {
            k: plumbing.k,
            augmentation: Augmentation::PseudoResponse,
            index_kind: IndexKind::Hybrid,
            expand_small2big: true,
            candidate_factor: plumbing.candidate_factor,
        },
        prompt_char_budget: plumbing.prompt_char_budget,
    };
    let canon = canonical(name);
    match canon.as_str() {
        "bp_rag" => {}
        "no_rag" => {
            cfg.use_rag = false;
            cfg.use_query_classification = false;
        }
        "rag_1" => {
            cfg.chunking = ChunkingConfig::new(ChunkStrategy::Vanilla, plumbing.chunk_size)?;
            cfg.retrieval.expand_small2big = false;
        }
        "rag_2" => {
            cfg.chunking = ChunkingConfig::new(ChunkStrategy::SlidingWindow, plumbing.chunk_size)?;
            cfg.retrieval.expand_small2big = false;
        }
        "rag_3" => cfg.retrieval.index_kind = IndexKind::Sparse,
        "rag_4" => cfg.retrieval.index_kind = IndexKind::Dense,
        "rag_5" => cfg.embedder.model_name = "medcpt".to_string(),
        "rag_6" => cfg.embedder.model_name = "gte-base".to_string(),
        "rag_7" => cfg.use_query_classification = false,
        "rag_8" => cfg.retrieval.augmentation = Augmentation::Rewrite,
        "rag_9" => cfg.retrieval.augmentation = Augmentation::Vanilla,
        "rag_10" => cfg.prompting = Prompting::Cot,
        "rag_11" => cfg.prompting = Prompting::DirectAnswer,
        other => {
            return Err(RagError::Config(format!(
                "unknown preset {other:?}; expected one of {}",
                EVAL_PRESET_NAMES.join(", ")
            )))
        }
    }
    cfg.preset_name = Some(
        EVAL_PRESET_NAMES
            .iter()
            .find(|n| canonical(n) == canon)
            .unwrap()
            .to_string(),
    );
    Ok(cfg)
}

/// The evaluation suite, one sample list per task family.
#[derive(Debug, Clone, Default)]
pub struct EvalDatasets {
    pub mcq: Vec<EvalSample>,
    pub ynm: Vec<EvalSample>,
    pub ner: Vec<EvalSample>,
}

impl EvalDatasets {
    pub fn total(&self) -> usize {
        self.mcq.len() + self.ynm.len() + self.ner.len()
    }

    fn tasks(&self) -> [(TaskKind, &[EvalSample]); 3] {
        [
            (TaskKind::Mcq, &self.mcq),
            (TaskKind::YesNoMaybe, &self.ynm),
            (TaskKind::Ner, &self.ner),
        ]
    }
}

struct SampleRun {
    response: Option<String>,
    latency_s: f64,
    failed: bool,
}

fn answer_all(
    samples: &[EvalSample],
    cfg: &PipelineConfig,
    components: &PipelineComponents,
    pool: &rayon::ThreadPool,
) -> Vec<SampleRun> {
    pool.install(|| {
        samples
            .par_iter()
            .map(|sample| {
                let query = render_task_query(sample);
                match answer_query(&query, cfg, components) {
                    Ok(trace) => SampleRun {
                        response: Some(trace.final_response),
                        latency_s: trace.latency_s,
                        failed: false,
                    },
                    Err(RagError::Pipeline { trace, .. }) => SampleRun {
                        response: None,
                        latency_s: trace.latency_s,
                        failed: true,
                    },
                    Err(_) => SampleRun {
                        response: None,
                        latency_s: 0.0,
                        failed: true,
                    },
                }
            })
            .collect()
    })
}

/// Evaluates one configuration over the whole suite: accuracy for the
/// mcq and ynm tasks, instance-level strict micro-F1 for ner, all in
/// percent, plus the average latency per query. Individual sample
/// failures score as incorrect; the run never aborts.
pub fn run_eval(
    cfg: &PipelineConfig,
    datasets: &EvalDatasets,
    components: &PipelineComponents,
    parallelism: usize,
) -> Result<EvalReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| RagError::Config(format!("thread pool: {e}")))?;

    let mut per_task = BTreeMap::new();
    let mut n_samples = BTreeMap::new();
    let mut total_latency = 0.0;
    let mut total_queries = 0usize;
    let mut failures = 0usize;

    for (task, samples) in datasets.tasks() {
        if samples.is_empty() {
            continue;
        }
        let runs = answer_all(samples, cfg, components, &pool);
        total_queries += runs.len();
        total_latency += runs.iter().map(|r| r.latency_s).sum::<f64>();
        failures += runs.iter().filter(|r| r.failed).count();

        let score = match task {
            TaskKind::Mcq => {
                let golds: Vec<char> = samples
                    .iter()
                    .map(|s| match s.gold {
                        GoldAnswer::Letter(l) => l,
                        _ => unreachable!("mcq gold"),
                    })
                    .collect();
                let preds: Vec<Option<char>> = samples
                    .iter()
                    .zip(&runs)
                    .map(|(s, r)| {
                        r.response
                            .as_deref()
                            .and_then(|text| parse_mcq_answer(text, &s.options))
                    })
                    .collect();
                accuracy(&preds, &golds)? * 100.0
            }
            TaskKind::YesNoMaybe => {
                let golds: Vec<super::YnmLabel> = samples
                    .iter()
                    .map(|s| match s.gold {
                        GoldAnswer::Ynm(l) => l,
                        _ => unreachable!("ynm gold"),
                    })
                    .collect();
                let preds: Vec<Option<super::YnmLabel>> = runs
                    .iter()
                    .map(|r| r.response.as_deref().and_then(parse_ynm))
                    .collect();
                accuracy(&preds, &golds)? * 100.0
            }
            TaskKind::Ner => {
                let golds: Vec<(String, _)> = samples
                    .iter()
                    .map(|s| {
                        let set = match &s.gold {
                            GoldAnswer::Entities(set) => set.clone(),
                            _ => unreachable!("ner gold"),
                        };
                        (s.id.clone(), set)
                    })
                    .collect();
                let preds: Vec<(String, _)> = samples
                    .iter()
                    .zip(&runs)
                    .map(|(s, r)| {
                        let set = r
                            .response
                            .as_deref()
                            .map(parse_ner_json)
                            .unwrap_or_default();
                        (s.id.clone(), set)
                    })
                    .collect();
                micro_f1(&preds, &golds)?.f1 * 100.0
            }
        };
        per_task.insert(task.short_name().to_string(), score);
        n_samples.insert(task.short_name().to_string(), samples.len());
    }

    if failures > 0 {
        eprintln!(
            "warning: {failures} of {total_queries} queries failed and scored as incorrect"
        );
    }

    let avg_score = if per_task.is_empty() {
        0.0
    } else {
        per_task.values().sum::<f64>() / per_task.len() as f64
    };
    let avg_latency_s = if total_queries == 0 {
        0.0
    } else {
        total_latency / total_queries as f64
    };
    Ok(EvalReport {
        config: cfg
            .preset_name
            .clone()
            .unwrap_or_else(|| "custom".to_string()),
        per_task,
        avg_score,
        avg_latency_s,
        n_samples,
    })
}

/// Inputs shared by every preset in a grid run.
pub struct GridComponents<'a> {
    pub docs: &'a [Document],
    pub llm: &'a Backend,
    pub classifier: Option<&'a ClassifierModel>,
    pub templates: &'a PromptTemplates,
    pub seed: u64,
    pub parallelism: usize,
    pub dense_mode: DenseMode,
    pub hnsw: HnswParams,
}

type IndexCacheKey = (ChunkStrategy, usize, IndexKind, String);

fn build_grid_index(
    cfg: &PipelineConfig,
    base: &GridComponents,
) -> Result<(CorpusIndex, Backend)> {
    let embedder = Backend::new(&cfg.embedder)?;
    let mut units = Vec::new();
    let mut parents = Vec::new();
    for doc in base.docs {
        let chunked = chunk_document(doc, &cfg.chunking);
        units.extend(chunked.retrieval_units);
        parents.extend(chunked.parents);
    }
    let index = CorpusIndex::build(
        units,
        parents,
        cfg.index_kind(),
        Some(&embedder),
        Some(base.hnsw),
        base.dense_mode,
        base.seed,
    )?;
    Ok((index, embedder))
}

/// Evaluates presets one at a time while sharing built indexes: each
/// (chunking, indexing, embedder) combination is constructed once and
/// reused by every preset that needs it.
pub struct GridRunner<'a> {
    base: GridComponents<'a>,
    cache: HashMap<IndexCacheKey, (CorpusIndex, Backend)>,
}

impl<'a> GridRunner<'a> {
    pub fn new(base: GridComponents<'a>) -> Self {
        GridRunner {
            base,
            cache: HashMap::new(),
        }
    }

    pub fn run_preset(&mut self, cfg: &PipelineConfig, datasets: &EvalDatasets) -> Result<EvalReport> {
        if !cfg.use_rag {
            let components = PipelineComponents {
                llm: self.base.llm,
                embedder: None,
                index: None,
                classifier: None,
                templates: self.base.templates,
            };
            return run_eval(cfg, datasets, &components, self.base.parallelism);
        }
        if cfg.use_query_classification && self.base.classifier.is_none() {
            return Err(RagError::Config(format!(
                "preset {:?} needs a trained classifier model",
                cfg.preset_name.as_deref().unwrap_or("custom")
            )));
        }
        let key: IndexCacheKey = (
            cfg.chunking.strategy,
            cfg.chunking.chunk_size,
            cfg.index_kind(),
            cfg.embedder.model_name.clone(),
        );
        if !self.cache.contains_key(&key) {
            let built = build_grid_index(cfg, &self.base)?;
            self.cache.insert(key.clone(), built);
        }
        let (index, embedder) = self.cache.get(&key).unwrap();
        let components = PipelineComponents {
            llm: self.base.llm,
            embedder: Some(embedder),
            index: Some(index),
            classifier: if cfg.use_query_classification {
                self.base.classifier
            } else {
                None
            },
            templates: self.base.templates,
        };
        run_eval(cfg, datasets, &components, self.base.parallelism)
    }

    /// Distinct index builds performed so far.
    pub fn indexes_built(&self) -> usize {
        self.cache.len()
    }
}

/// Runs every preset over the suite; reports come back in preset order.
pub fn grid_run(
    presets: &[PipelineConfig],
    datasets: &EvalDatasets,
    base: GridComponents,
) -> Result<Vec<EvalReport>> {
    let mut runner = GridRunner::new(base);
    presets
        .iter()
        .map(|cfg| runner.run_preset(cfg, datasets))
        .collect()
}

/// A copy of the report with presentation rounding applied (one
/// decimal, half away from zero).
pub fn presentation_report(report: &EvalReport) -> EvalReport {
    EvalReport {
        config: report.config.clone(),
        per_task: report
            .per_task
            .iter()
            .map(|(k, v)| (k.clone(), round1(*v)))
            .collect(),
        avg_score: round1(report.avg_score),
        avg_latency_s: round1(report.avg_latency_s),
        n_samples: report.n_samples.clone(),
    }
}

const TABLE_TASK_ORDER: [&str; 3] = ["mcq", "ynm", "ner"];

/// Renders reports as an aligned text table: one row per configuration,
/// per-task scores, average score, and average latency.
pub fn format_report_table(reports: &[EvalReport]) -> String {
    let mut rows: Vec<Vec<String>> = Vec::new();
    let header: Vec<String> = ["Method", "Setting", "mcq", "ynm", "ner", "Avg score", "Avg latency (s)"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    rows.push(header);
    for report in reports {
        let rounded = presentation_report(report);
        let mut row = vec![
            rounded.config.clone(),
            preset_setting(&rounded.config).to_string(),
        ];
        for task in TABLE_TASK_ORDER {
            row.push(
                rounded
                    .per_task
                    .get(task)
                    .map_or_else(|| "-".to_string(), |v| format!("{v:.1}")),
            );
        }
        row.push(format!("{:.1}", rounded.avg_score));
        row.push(format!("{:.1}", rounded.avg_latency_s));
        rows.push(row);
    }
    let n_cols = rows[0].len();
    let widths: Vec<usize> = (0..n_cols)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c < 2 {
                    format!("{cell:<width$}", width = widths[c])
                } else {
                    format!("{cell:>width$}", width = widths[c])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (n_cols - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

/// Writes the reports (presentation-rounded) as a JSON array.
pub fn write_report_json(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let rounded: Vec<EvalReport> = reports.iter().map(presentation_report).collect();
    let body = serde_json::to_string_pretty(&rounded).unwrap();
    std::fs::write(path, body + "\n").map_err(|e| RagError::io(path.display().to_string(), e))
}
