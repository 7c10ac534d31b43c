//! Query classification: automatic need-RAG labeling from the
//! log-likelihood gain of the gold response under retrieved documents,
//! dataset splitting, and a logistic-regression classifier over query
//! embeddings.
//!
//! A query is labeled `need_rag` (1) exactly when `l1 - l0 > 0`, where
//! `l0` scores the response conditioned on the query alone and `l1`
//! conditions on the query plus retrieved documents.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{RagError, Result};
use crate::generate::{build_prompt, PromptTemplates, Prompting};
use crate::index::CorpusIndex;
use crate::retrieve::{retrieve, RetrievalConfig};

pub const NEED_RAG: u8 = 1;
pub const NO_RAG: u8 = 0;

/// A query/response pair with its log-likelihood scores and label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query: String,
    pub response: String,
    pub l0: f64,
    pub l1: f64,
    pub label: u8,
    pub doc_ids: Vec<String>,
}

impl LabeledQuery {
    pub fn need_rag(&self) -> bool {
        self.label == NEED_RAG
    }
}

/// Labels one query by comparing the response's log-likelihood with and
/// without retrieved documents. Retrieval follows `rcfg` (hybrid search
/// in the reference setup, k = 8).
pub fn label_query(
    query: &str,
    response: &str,
    rcfg: &RetrievalConfig,
    index: &CorpusIndex,
    llm: &Backend,
    embedder: Option<&Backend>,
    templates: &PromptTemplates,
) -> Result<LabeledQuery> {
    let fail = |stage: &str, e: RagError| RagError::Labeling(format!("{stage}: {e}"));
    let docs = retrieve(query, rcfg, index, embedder).map_err(|e| fail("retrieval", e))?;
    let ctx0 = build_prompt(query, &[], Prompting::DirectAnswer, None, templates)?;
    let ctx1 = build_prompt(query, &docs, Prompting::DirectAnswer, None, templates)?;
    let l0 = llm
        .log_likelihood(response, &ctx0)
        .map_err(|e| fail("scoring l0", e))?;
    let l1 = llm
        .log_likelihood(response, &ctx1)
        .map_err(|e| fail("scoring l1", e))?;
    let label = if l1 - l0 > 0.0 { NEED_RAG } else { NO_RAG };
    Ok(LabeledQuery {
        query: query.to_string(),
        response: response.to_string(),
        l0,
        l1,
        label,
        doc_ids: docs.into_iter().map(|d| d.chunk_id).collect(),
    })
}

/// Labels a whole dataset in parallel, preserving input order. Failed
/// samples are skipped and counted.
pub fn label_dataset(
    pairs: &[(String, String)],
    rcfg: &RetrievalConfig,
    index: &CorpusIndex,
    llm: &Backend,
    embedder: Option<&Backend>,
    templates: &PromptTemplates,
    parallelism: usize,
) -> Result<(Vec<LabeledQuery>, usize)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| RagError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<LabeledQuery>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|(q, r)| label_query(q, r, rcfg, index, llm, embedder, templates))
            .collect()
    });
    let mut labeled = Vec::with_capacity(results.len());
    let mut skipped = 0usize;
    for r in results {
        match r {
            Ok(l) => labeled.push(l),
            Err(_) => skipped += 1,
        }
    }
    Ok((labeled, skipped))
}

/// Train/dev/test fractions plus the shuffle seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub dev_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, dev_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            train_frac,
            dev_frac,
            test_frac,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_frac <= 0.0 || self.dev_frac <= 0.0 || self.test_frac <= 0.0 {
            return Err(RagError::InvalidInput(
                "split fractions must be positive".into(),
            ));
        }
        let sum = self.train_frac + self.dev_frac + self.test_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(RagError::InvalidInput(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    /// The reference 24k : 2k : 1.9k proportions.
    fn default() -> Self {
        SplitSpec {
            train_frac: 24.0 / 27.9,
            dev_frac: 2.0 / 27.9,
            test_frac: 1.9 / 27.9,
            seed: 0,
        }
    }
}

/// Seeded shuffle followed by contiguous slicing. Train and dev sizes
/// round down; the remainder becomes the test split, so the three parts
/// partition the input exactly.
pub fn split_dataset<T>(mut samples: Vec<T>, spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(RagError::InvalidInput("cannot split an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    samples.shuffle(&mut rng);
    let n = samples.len();
    let n_train = ((n as f64) * spec.train_frac).floor() as usize;
    let n_dev = ((n as f64) * spec.dev_frac).floor() as usize;
    let rest = samples.split_off(n_train);
    let mut dev = rest;
    let test = dev.split_off(n_dev.min(dev.len()));
    Ok((samples, dev, test))
}

/// Linear classifier over query embeddings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
}

impl ClassifierModel {
    pub fn zeros(dim: usize) -> Self {
        ClassifierModel {
            dim,
            weights: vec![0.0; dim],
            bias: 0.0,
            threshold: 0.5,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).unwrap())
            .map_err(|e| RagError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| RagError::io(path.display().to_string(), e))?;
        serde_json::from_str(&raw)
            .map_err(|e| RagError::DataIntegrity(format!("bad classifier model file: {e}")))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            weight_decay: 1e-4,
            max_epochs: 500,
            eval_every: 10,
        }
    }
}

/// Training diagnostics: per-epoch losses and the best dev accuracy.
#[derive(Debug, Clone)]
pub struct TrainStats {
    pub losses: Vec<f64>,
    pub best_dev_acc: f64,
    pub epochs_run: usize,
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Mean cross-entropy plus an L2 penalty on the weights (bias excluded).
pub fn logistic_loss(weights: &[f64], bias: f64, x: &[Vec<f64>], y: &[u8], weight_decay: f64) -> f64 {
    let n = x.len() as f64;
    let mut loss = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let z = dot(weights, xi) + bias;
        let p = sigmoid(z).clamp(1e-12, 1.0 - 1e-12);
        loss -= if yi == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    loss / n + 0.5 * weight_decay * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Analytic gradient of [`logistic_loss`]: returns (d/dw, d/db).
pub fn logistic_gradient(
    weights: &[f64],
    bias: f64,
    x: &[Vec<f64>],
    y: &[u8],
    weight_decay: f64,
) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let z = dot(weights, xi) + bias;
        let err = sigmoid(z) - yi as f64;
        for (g, v) in gw.iter_mut().zip(xi) {
            *g += err * v;
        }
        gb += err;
    }
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / n + weight_decay * w;
    }
    (gw, gb / n)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn accuracy_on(weights: &[f64], bias: f64, threshold: f64, x: &[Vec<f64>], y: &[u8]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let correct = x
        .iter()
        .zip(y)
        .filter(|(xi, &yi)| {
            let p = sigmoid(dot(weights, xi) + bias);
            ((p >= threshold) as u8) == yi
        })
        .count();
    correct as f64 / x.len() as f64
}

/// Full-batch gradient descent on embeddings; returns the parameters
/// from the best dev-accuracy evaluation (checked every
/// `eval_every` epochs and after the final epoch).
pub fn train_on_embeddings(
    x_train: &[Vec<f64>],
    y_train: &[u8],
    x_dev: &[Vec<f64>],
    y_dev: &[u8],
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, TrainStats)> {
    if x_train.is_empty() {
        return Err(RagError::InvalidInput("training set is empty".into()));
    }
    if x_train.len() != y_train.len() || x_dev.len() != y_dev.len() {
        return Err(RagError::InvalidInput(
            "embeddings and labels must align".into(),
        ));
    }
    let positives = y_train.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == y_train.len() {
        return Err(RagError::DegenerateData(
            "training set contains a single class".into(),
        ));
    }
    let dim = x_train[0].len();
    if x_train.iter().chain(x_dev).any(|v| v.len() != dim) {
        return Err(RagError::InvalidInput(
            "inconsistent embedding dimensions".into(),
        ));
    }

    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut losses = Vec::with_capacity(cfg.max_epochs + 1);
    let mut best: Option<(f64, Vec<f64>, f64)> = None;

    let check_dev = |epoch_weights: &[f64], epoch_bias: f64, best: &mut Option<(f64, Vec<f64>, f64)>| {
        let acc = if x_dev.is_empty() {
            accuracy_on(epoch_weights, epoch_bias, 0.5, x_train, y_train)
        } else {
            accuracy_on(epoch_weights, epoch_bias, 0.5, x_dev, y_dev)
        };
        let better = best.as_ref().is_none_or(|(b, _, _)| acc > *b);
        if better {
            *best = Some((acc, epoch_weights.to_vec(), epoch_bias));
        }
    };

    for epoch in 1..=cfg.max_epochs {
        losses.push(logistic_loss(&weights, bias, x_train, y_train, cfg.weight_decay));
        let (gw, gb) = logistic_gradient(&weights, bias, x_train, y_train, cfg.weight_decay);
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= cfg.learning_rate * g;
        }
        bias -= cfg.learning_rate * gb;
        if epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs {
            check_dev(&weights, bias, &mut best);
        }
    }
    losses.push(logistic_loss(&weights, bias, x_train, y_train, cfg.weight_decay));

    let (best_dev_acc, weights, bias) = best.expect("at least one dev evaluation ran");
    Ok((
        ClassifierModel {
            dim,
            weights,
            bias,
            threshold: 0.5,
        },
        TrainStats {
            losses,
            best_dev_acc,
            epochs_run: cfg.max_epochs,
        },
    ))
}

fn embed_queries(samples: &[LabeledQuery], embedder: &Backend) -> Result<Vec<Vec<f64>>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<&str> = samples.iter().map(|s| s.query.as_str()).collect();
    Ok(embedder
        .embed_batch(&texts)?
        .into_iter()
        .map(|v| v.values().iter().map(|&x| x as f64).collect())
        .collect())
}

/// Embeds the queries and trains the logistic-regression classifier.
pub fn train_classifier(
    train: &[LabeledQuery],
    dev: &[LabeledQuery],
    embedder: &Backend,
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, TrainStats)> {
    let x_train = embed_queries(train, embedder)?;
    let y_train: Vec<u8> = train.iter().map(|s| s.label).collect();
    let x_dev = embed_queries(dev, embedder)?;
    let y_dev: Vec<u8> = dev.iter().map(|s| s.label).collect();
    train_on_embeddings(&x_train, &y_train, &x_dev, &y_dev, cfg)
}

/// `prob = sigmoid(w . embed(query) + b)`; need-RAG at `prob >= threshold`
/// (the boundary routes toward retrieval).
pub fn classify(model: &ClassifierModel, query: &str, embedder: &Backend) -> Result<(bool, f64)> {
    let embedding: Vec<f64> = embedder.embed_batch(&[query])?[0]
        .values()
        .iter()
        .map(|&x| x as f64)
        .collect();
    classify_embedding(model, &embedding)
}

pub fn classify_embedding(model: &ClassifierModel, embedding: &[f64]) -> Result<(bool, f64)> {
    if embedding.len() != model.dim {
        return Err(RagError::InvalidInput(format!(
            "embedding dimension {} does not match model dimension {}",
            embedding.len(),
            model.dim
        )));
    }
    let prob = sigmoid(dot(&model.weights, embedding) + model.bias);
    Ok((prob >= model.threshold, prob))
}

/// Accuracy plus positive-class precision/recall/F1.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClassifierMetrics {
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn evaluate_classifier(
    model: &ClassifierModel,
    test: &[LabeledQuery],
    embedder: &Backend,
) -> Result<ClassifierMetrics> {
    if test.is_empty() {
        return Err(RagError::InvalidInput("test set is empty".into()));
    }
    let x = embed_queries(test, embedder)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (xi, sample) in x.iter().zip(test) {
        let (pred, _) = classify_embedding(model, xi)?;
        match (pred, sample.need_rag()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let acc = (tp + tn) as f64 / test.len() as f64;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassifierMetrics {
        acc,
        precision,
        recall,
        f1,
    })
}

/// Writes labeled queries as JSON Lines
/// `{query, response, l0, l1, label, doc_ids}`.
pub fn write_labeled_jsonl(path: &Path, samples: &[LabeledQuery]) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| RagError::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for s in samples {
        writeln!(w, "{}", serde_json::to_string(s).unwrap())
            .map_err(|e| RagError::io(path.display().to_string(), e))?;
    }
    w.flush()
        .map_err(|e| RagError::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn read_labeled_jsonl(path: &Path) -> Result<Vec<LabeledQuery>> {
    use std::io::BufRead;
    let file = std::fs::File::open(path).map_err(|e| RagError::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RagError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RagError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
