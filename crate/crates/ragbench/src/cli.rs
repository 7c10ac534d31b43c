//! Command-line entry point: corpus indexing, need-RAG labeling,
//! classifier training, single-query answering, and grid evaluation.
//!
//! Exit codes: 0 success; 1 runtime failure (parse errors carry line
//! numbers, pipeline failures leave partial results); 2 configuration
//! errors including missing prerequisites and unknown flags.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::config::{ResolvedConfig, RunConfigFile};
use crate::corpus::{self, Chunk, ChunkStrategy, ChunkingConfig};
use crate::error::{RagError, Result};
use crate::eval::{
    self, format_report_table, preset_config, write_report_json, EvalDatasets, EvalReport,
    GridComponents, GridRunner, PresetPlumbing, EVAL_PRESET_NAMES,
};
use crate::generate::{answer_query, PipelineComponents};
use crate::index::{
    build_sparse, load_dense, load_sparse, save_dense, save_sparse, CorpusIndex, DenseIndex,
    DenseMode, HnswParams, IndexKind,
};
use crate::qclass::{
    evaluate_classifier, label_dataset, split_dataset, train_classifier, ClassifierModel,
    TrainConfig,
};
use crate::retrieve::RetrievalConfig;

#[derive(Parser)]
#[command(
    name = "ragbench",
    version,
    about = "Retrieval-augmented generation pipeline and benchmark grid"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "ragbench.toml")]
    config: PathBuf,
    /// Override the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config file's worker count.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk the corpus and persist the configured indexes.
    Index {
        /// Chunking strategy (defaults to the config file's).
        #[arg(long)]
        strategy: Option<ChunkStrategy>,
        /// Index kind to build (defaults to the config file's).
        #[arg(long)]
        index_kind: Option<IndexKind>,
    },
    /// Label query/response pairs with the need-RAG rule and write the
    /// labeled dataset.
    Label,
    /// Split the labeled dataset and train the query classifier.
    Train,
    /// Evaluate one preset or the whole grid and write the report.
    Eval {
        /// Preset name, or "all" for the full 13-row grid.
        #[arg(long, default_value = "all")]
        preset: String,
    },
    /// Answer a single question through the configured pipeline.
    Query {
        #[arg(long)]
        question: String,
        /// Also print the full generation trace as JSON.
        #[arg(long)]
        trace: bool,
    },
}

struct CliFailure {
    code: i32,
    message: String,
}

type CliResult = std::result::Result<(), CliFailure>;

fn code_for(e: &RagError) -> i32 {
    match e {
        RagError::Config(_) | RagError::InvalidInput(_) => 2,
        _ => 1,
    }
}

fn fail(e: RagError) -> CliFailure {
    CliFailure {
        code: code_for(&e),
        message: e.to_string(),
    }
}

fn config_fail(message: impl Into<String>) -> CliFailure {
    CliFailure {
        code: 2,
        message: message.into(),
    }
}

fn runtime_fail(message: impl Into<String>) -> CliFailure {
    CliFailure {
        code: 1,
        message: message.into(),
    }
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let resolved = match load_config(&cli) {
        Ok(r) => r,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return f.code;
        }
    };
    let outcome = match &cli.command {
        Command::Index {
            strategy,
            index_kind,
        } => cmd_index(&resolved, *strategy, *index_kind),
        Command::Label => cmd_label(&resolved),
        Command::Train => cmd_train(&resolved),
        Command::Eval { preset } => cmd_eval(&resolved, preset),
        Command::Query { question, trace } => cmd_query(&resolved, question, *trace),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load_config(cli: &Cli) -> std::result::Result<ResolvedConfig, CliFailure> {
    if !cli.config.exists() {
        return Err(config_fail(format!(
            "config file {:?} does not exist (--config)",
            cli.config
        )));
    }
    RunConfigFile::load(&cli.config)
        .and_then(|c| c.resolve(&cli.config, cli.seed, cli.parallelism))
        .map_err(fail)
}

fn require_input(path: &Option<PathBuf>, field: &str) -> std::result::Result<PathBuf, CliFailure> {
    let path = path
        .as_ref()
        .ok_or_else(|| config_fail(format!("config is missing `{field}`")))?;
    if !path.exists() {
        return Err(config_fail(format!(
            "`{field}` = {path:?} does not exist"
        )));
    }
    Ok(path.clone())
}

fn require_dir(path: &Option<PathBuf>, field: &str) -> std::result::Result<PathBuf, CliFailure> {
    let path = path
        .as_ref()
        .ok_or_else(|| config_fail(format!("config is missing `{field}`")))?;
    std::fs::create_dir_all(path)
        .map_err(|e| runtime_fail(format!("cannot create {path:?}: {e}")))?;
    Ok(path.clone())
}

/// Build settings recorded alongside persisted indexes so later
/// commands can validate compatibility.
#[derive(Debug, Serialize, Deserialize)]
struct IndexMeta {
    strategy: ChunkStrategy,
    chunk_size: usize,
    index_kind: IndexKind,
    dense_mode: DenseMode,
    embedder_model: String,
    embed_dim: usize,
    seed: u64,
}

const META_FILE: &str = "meta.json";
const CHUNKS_FILE: &str = "chunks.jsonl";
const PARENTS_FILE: &str = "parents.jsonl";
const SPARSE_DIR: &str = "sparse";
const DENSE_FILE: &str = "dense.bin";
const MODEL_FILE: &str = "classifier.json";

fn cmd_index(
    resolved: &ResolvedConfig,
    strategy: Option<ChunkStrategy>,
    index_kind: Option<IndexKind>,
) -> CliResult {
    let corpus_path = require_input(&resolved.paths.corpus, "paths.corpus")?;
    let index_dir = require_dir(&resolved.paths.index_dir, "paths.index_dir")?;

    let strategy = strategy.unwrap_or(resolved.pipeline.chunking.strategy);
    let index_kind = index_kind.unwrap_or(resolved.pipeline.index_kind());
    let chunking =
        ChunkingConfig::new(strategy, resolved.pipeline.chunking.chunk_size).map_err(fail)?;

    let docs = corpus::ingest(&corpus_path).map_err(fail)?;
    let mut units: Vec<Chunk> = Vec::new();
    let mut parents: Vec<Chunk> = Vec::new();
    for doc in &docs {
        let chunked = corpus::chunk_document(doc, &chunking);
        units.extend(chunked.retrieval_units);
        parents.extend(chunked.parents);
    }

    corpus::write_chunks_jsonl(&index_dir.join(CHUNKS_FILE), &units).map_err(fail)?;
    if strategy == ChunkStrategy::Small2big {
        corpus::write_chunks_jsonl(&index_dir.join(PARENTS_FILE), &parents).map_err(fail)?;
    }

    if index_kind.needs_sparse() {
        let sparse = build_sparse(&units).map_err(fail)?;
        save_sparse(&index_dir.join(SPARSE_DIR), &sparse).map_err(fail)?;
    }
    if index_kind.needs_dense() {
        let embedder = Backend::new(&resolved.embedder).map_err(fail)?;
        let dense = DenseIndex::build(
            &units,
            &embedder,
            resolved.dense_mode,
            HnswParams::default(),
            resolved.seed,
        )
        .map_err(fail)?;
        save_dense(&index_dir.join(DENSE_FILE), &dense).map_err(fail)?;
    }

    let meta = IndexMeta {
        strategy,
        chunk_size: chunking.chunk_size,
        index_kind,
        dense_mode: resolved.dense_mode,
        embedder_model: resolved.embedder.model_name.clone(),
        embed_dim: resolved.embedder.embed_dim,
        seed: resolved.seed,
    };
    std::fs::write(
        index_dir.join(META_FILE),
        serde_json::to_string_pretty(&meta).unwrap() + "\n",
    )
    .map_err(|e| runtime_fail(format!("cannot write index metadata: {e}")))?;

    let size_of = |name: &str| {
        std::fs::metadata(index_dir.join(name))
            .map(|m| m.len())
            .unwrap_or(0)
    };
    println!(
        "indexed {} document(s): {} chunk(s){} [{} / {}]",
        docs.len(),
        units.len(),
        if strategy == ChunkStrategy::Small2big {
            format!(" + {} parent chunk(s)", parents.len())
        } else {
            String::new()
        },
        strategy.as_str(),
        index_kind.as_str(),
    );
    if index_kind.needs_sparse() {
        let dir = index_dir.join(SPARSE_DIR);
        let bytes: u64 = ["stats.json", "postings.jsonl", "doclens.jsonl"]
            .iter()
            .map(|f| {
                std::fs::metadata(dir.join(f))
                    .map(|m| m.len())
                    .unwrap_or(0)
            })
            .sum();
        println!("sparse index: {bytes} bytes");
    }
    if index_kind.needs_dense() {
        println!("dense index: {} bytes", size_of(DENSE_FILE));
    }
    Ok(())
}

fn load_corpus_index(resolved: &ResolvedConfig) -> std::result::Result<(CorpusIndex, IndexMeta), CliFailure> {
    let index_dir = resolved
        .paths
        .index_dir
        .as_ref()
        .ok_or_else(|| config_fail("config is missing `paths.index_dir`"))?;
    let meta_path = index_dir.join(META_FILE);
    if !meta_path.exists() {
        return Err(config_fail(format!(
            "no index found at {index_dir:?}; run `ragbench index` first"
        )));
    }
    let meta: IndexMeta = serde_json::from_str(
        &std::fs::read_to_string(&meta_path)
            .map_err(|e| runtime_fail(format!("cannot read {meta_path:?}: {e}")))?,
    )
    .map_err(|e| runtime_fail(format!("bad index metadata: {e}")))?;

    if meta.embedder_model != resolved.embedder.model_name && meta.index_kind.needs_dense() {
        return Err(config_fail(format!(
            "index was embedded with {:?} but config names {:?}; re-run `ragbench index`",
            meta.embedder_model, resolved.embedder.model_name
        )));
    }

    let chunks = corpus::read_chunks_jsonl(&index_dir.join(CHUNKS_FILE)).map_err(fail)?;
    let parents_path = index_dir.join(PARENTS_FILE);
    let parents = if parents_path.exists() {
        corpus::read_chunks_jsonl(&parents_path).map_err(fail)?
    } else {
        Vec::new()
    };
    let sparse = if meta.index_kind.needs_sparse() {
        Some(load_sparse(&index_dir.join(SPARSE_DIR)).map_err(fail)?)
    } else {
        None
    };
    let dense = if meta.index_kind.needs_dense() {
        Some(load_dense(&index_dir.join(DENSE_FILE)).map_err(fail)?)
    } else {
        None
    };
    let index = CorpusIndex {
        sparse,
        dense,
        chunks: chunks.into_iter().map(|c| (c.id.clone(), c)).collect(),
        parents: parents.into_iter().map(|c| (c.id.clone(), c)).collect(),
    };
    Ok((index, meta))
}

#[derive(Deserialize)]
struct QueryPair {
    query: String,
    response: String,
}

fn cmd_label(resolved: &ResolvedConfig) -> CliResult {
    let queries_path = require_input(&resolved.paths.queries, "paths.queries")?;
    let labeled_path = resolved
        .paths
        .labeled
        .clone()
        .ok_or_else(|| config_fail("config is missing `paths.labeled`"))?;
    let (index, meta) = load_corpus_index(resolved)?;
    if meta.index_kind != IndexKind::Hybrid {
        return Err(config_fail(format!(
            "labeling uses hybrid retrieval but the index was built as {:?}; \
             re-run `ragbench index --index-kind hybrid`",
            meta.index_kind.as_str()
        )));
    }

    let pairs = read_query_pairs(&queries_path).map_err(fail)?;
    if pairs.is_empty() {
        return Err(runtime_fail(format!("{queries_path:?} holds no query pairs")));
    }
    let llm = Backend::new(&resolved.llm).map_err(fail)?;
    let embedder = Backend::new(&resolved.embedder).map_err(fail)?;
    let rcfg = RetrievalConfig {
        k: resolved.pipeline.retrieval.k,
        augmentation: crate::retrieve::Augmentation::Vanilla,
        index_kind: IndexKind::Hybrid,
        expand_small2big: meta.strategy == ChunkStrategy::Small2big,
        candidate_factor: resolved.pipeline.retrieval.candidate_factor,
    };
    let (labeled, skipped) = label_dataset(
        &pairs,
        &rcfg,
        &index,
        &llm,
        Some(&embedder),
        &resolved.templates,
        resolved.parallelism,
    )
    .map_err(fail)?;

    crate::qclass::write_labeled_jsonl(&labeled_path, &labeled).map_err(fail)?;
    let positives = labeled.iter().filter(|l| l.need_rag()).count();
    let rate = if labeled.is_empty() {
        0.0
    } else {
        100.0 * positives as f64 / labeled.len() as f64
    };
    println!(
        "labeled {} sample(s): positive rate {rate:.1}% ({positives}/{}), skipped {skipped}",
        labeled.len(),
        labeled.len()
    );
    println!("wrote {labeled_path:?}");
    Ok(())
}

fn read_query_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    use std::io::BufRead;
    let file =
        std::fs::File::open(path).map_err(|e| RagError::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RagError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: QueryPair = serde_json::from_str(&line).map_err(|e| RagError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        pairs.push((pair.query, pair.response));
    }
    Ok(pairs)
}

fn cmd_train(resolved: &ResolvedConfig) -> CliResult {
    let labeled_path = require_input(&resolved.paths.labeled, "paths.labeled")?;
    let model_dir = require_dir(&resolved.paths.model_dir, "paths.model_dir")?;

    let labeled = crate::qclass::read_labeled_jsonl(&labeled_path).map_err(fail)?;
    let (train, dev, test) = split_dataset(labeled, &resolved.split).map_err(fail)?;
    println!(
        "split: {} train / {} dev / {} test",
        train.len(),
        dev.len(),
        test.len()
    );

    let embedder = Backend::new(&resolved.embedder).map_err(fail)?;
    let (model, stats) =
        train_classifier(&train, &dev, &embedder, &TrainConfig::default()).map_err(fail)?;
    let model_path = model_dir.join(MODEL_FILE);
    model.save(&model_path).map_err(fail)?;
    println!(
        "trained {} epoch(s), best dev accuracy {:.3}",
        stats.epochs_run, stats.best_dev_acc
    );
    if !test.is_empty() {
        let metrics = evaluate_classifier(&model, &test, &embedder).map_err(fail)?;
        println!(
            "test: acc {:.3}, precision {:.3}, recall {:.3}, f1 {:.3}",
            metrics.acc, metrics.precision, metrics.recall, metrics.f1
        );
    }
    println!("wrote {model_path:?}");
    Ok(())
}

fn load_datasets(resolved: &ResolvedConfig) -> std::result::Result<EvalDatasets, CliFailure> {
    let d = &resolved.paths.datasets;
    if d.mcq.is_none() && d.ynm.is_none() && d.ner.is_none() {
        return Err(config_fail(
            "config is missing `paths.datasets` (need at least one of mcq, ynm, ner)",
        ));
    }
    let mut datasets = EvalDatasets::default();
    if let Some(p) = &d.mcq {
        let p = require_input(&Some(p.clone()), "paths.datasets.mcq")?;
        datasets.mcq = eval::load_mcq_jsonl(&p).map_err(fail)?;
    }
    if let Some(p) = &d.ynm {
        let p = require_input(&Some(p.clone()), "paths.datasets.ynm")?;
        datasets.ynm = eval::load_ynm_jsonl(&p).map_err(fail)?;
    }
    if let Some(p) = &d.ner {
        let p = require_input(&Some(p.clone()), "paths.datasets.ner")?;
        datasets.ner = eval::load_ner_jsonl(&p).map_err(fail)?;
    }
    Ok(datasets)
}

fn cmd_eval(resolved: &ResolvedConfig, preset: &str) -> CliResult {
    let corpus_path = require_input(&resolved.paths.corpus, "paths.corpus")?;
    let report_dir = require_dir(&resolved.paths.report_dir, "paths.report_dir")?;
    let datasets = load_datasets(resolved)?;

    let plumbing = PresetPlumbing {
        chunk_size: resolved.pipeline.chunking.chunk_size,
        k: resolved.pipeline.retrieval.k,
        candidate_factor: resolved.pipeline.retrieval.candidate_factor,
        prompt_char_budget: resolved.pipeline.prompt_char_budget,
        embedder_base: resolved.embedder.clone(),
    };
    let presets: Vec<_> = if preset.eq_ignore_ascii_case("all") {
        EVAL_PRESET_NAMES
            .iter()
            .map(|n| preset_config(n, &plumbing))
            .collect::<Result<_>>()
            .map_err(fail)?
    } else {
        vec![preset_config(preset, &plumbing).map_err(fail)?]
    };

    let needs_classifier = presets.iter().any(|p| p.use_query_classification);
    let classifier = if needs_classifier {
        let model_dir = resolved
            .paths
            .model_dir
            .as_ref()
            .ok_or_else(|| config_fail("config is missing `paths.model_dir`"))?;
        let model_path = model_dir.join(MODEL_FILE);
        if !model_path.exists() {
            return Err(config_fail(format!(
                "classifier model {model_path:?} does not exist; run `ragbench train` first"
            )));
        }
        Some(ClassifierModel::load(&model_path).map_err(fail)?)
    } else {
        None
    };

    let docs = corpus::ingest(&corpus_path).map_err(fail)?;
    let llm = Backend::new(&resolved.llm).map_err(fail)?;
    let mut runner = GridRunner::new(GridComponents {
        docs: &docs,
        llm: &llm,
        classifier: classifier.as_ref(),
        templates: &resolved.templates,
        seed: resolved.seed,
        parallelism: resolved.parallelism,
        dense_mode: resolved.dense_mode,
        hnsw: HnswParams::default(),
    });

    let json_path = report_dir.join("report.json");
    let table_path = report_dir.join("report_table.txt");
    let mut reports: Vec<EvalReport> = Vec::new();
    for cfg in &presets {
        match runner.run_preset(cfg, &datasets) {
            Ok(report) => reports.push(report),
            Err(e) => {
                // Leave whatever finished behind before failing.
                let _ = write_report_json(&json_path, &reports);
                let _ = std::fs::write(&table_path, format_report_table(&reports));
                return Err(CliFailure {
                    code: code_for(&e),
                    message: format!(
                        "preset {:?} failed: {e} (partial results in {json_path:?})",
                        cfg.preset_name.as_deref().unwrap_or("custom")
                    ),
                });
            }
        }
    }

    write_report_json(&json_path, &reports).map_err(fail)?;
    let table = format_report_table(&reports);
    std::fs::write(&table_path, &table)
        .map_err(|e| runtime_fail(format!("cannot write {table_path:?}: {e}")))?;
    print!("{table}");
    println!(
        "{} preset(s) evaluated over {} sample(s); {} index build(s); reports in {:?}",
        reports.len(),
        datasets.total(),
        runner.indexes_built(),
        report_dir
    );
    Ok(())
}

fn cmd_query(resolved: &ResolvedConfig, question: &str, show_trace: bool) -> CliResult {
    if question.trim().is_empty() {
        return Err(config_fail("--question must be non-empty"));
    }
    let mut cfg = resolved.pipeline.clone();

    let (index, meta) = if cfg.use_rag {
        let (index, meta) = load_corpus_index(resolved)?;
        (Some(index), Some(meta))
    } else {
        (None, None)
    };
    if let Some(meta) = &meta {
        // The persisted index determines what retrieval can do.
        cfg.retrieval.index_kind = meta.index_kind;
        cfg.retrieval.expand_small2big = meta.strategy == ChunkStrategy::Small2big;
    }

    let classifier = if cfg.use_rag && cfg.use_query_classification {
        let model_dir = resolved
            .paths
            .model_dir
            .as_ref()
            .ok_or_else(|| config_fail("config is missing `paths.model_dir`"))?;
        let model_path = model_dir.join(MODEL_FILE);
        if !model_path.exists() {
            return Err(config_fail(format!(
                "classifier model {model_path:?} does not exist; run `ragbench train` \
                 first or set pipeline.use_query_classification = false"
            )));
        }
        Some(ClassifierModel::load(&model_path).map_err(fail)?)
    } else {
        None
    };

    let llm = Backend::new(&resolved.llm).map_err(fail)?;
    let embedder = Backend::new(&resolved.embedder).map_err(fail)?;
    let components = PipelineComponents {
        llm: &llm,
        embedder: Some(&embedder),
        index: index.as_ref(),
        classifier: classifier.as_ref(),
        templates: &resolved.templates,
    };
    match answer_query(question, &cfg, &components) {
        Ok(trace) => {
            println!("{}", trace.final_response);
            if show_trace {
                println!("{}", serde_json::to_string_pretty(&trace).unwrap());
            }
            Ok(())
        }
        Err(RagError::Pipeline { message, trace }) => {
            eprintln!("partial trace: {}", serde_json::to_string_pretty(&trace).unwrap());
            Err(runtime_fail(format!("pipeline failed: {message}")))
        }
        Err(e) => Err(fail(e)),
    }
}
