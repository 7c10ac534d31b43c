//! Synthetic fixtures shared by the integration suites: corpora with
//! engineered retrieval/labeling behavior, evaluation datasets with
//! canned mock answers, and ready-to-run CLI workspaces.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ragbench::corpus::Document;
use ragbench::eval::{EntityInstance, EvalSample, GoldAnswer, TaskKind, YnmLabel};

/// One sentence with exactly `tokens` tokens: `tokens - 1` words carrying
/// a unique `(doc, sentence)` marker, plus the terminating period.
pub fn marked_sentence(doc: usize, sent: usize, tokens: usize) -> String {
    assert!(tokens >= 2);
    let words: Vec<String> = (0..tokens - 1)
        .map(|k| format!("d{doc}s{sent}w{k}"))
        .collect();
    format!("{}.", words.join(" "))
}

/// Random documents for chunking-invariant checks. Every tenth document
/// is a single 300-token sentence (the oversized case); the rest hold
/// 2-25 sentences of 4-80 tokens.
pub fn synth_chunking_docs(n: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|d| {
            let text = if d % 10 == 9 {
                marked_sentence(d, 0, 300)
            } else {
                let n_sents = rng.random_range(2..=25usize);
                (0..n_sents)
                    .map(|j| marked_sentence(d, j, rng.random_range(4..=80usize)))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            Document {
                id: format!("doc{d}"),
                title: String::new(),
                text,
                source: "synthetic".into(),
            }
        })
        .collect()
}

/// Retrieval corpus for the end-to-end fixtures: document `i` carries a
/// unique key term `poskey{i}` plus the answer tokens `posans{i}a/b`
/// that positive labeling queries are engineered to depend on.
pub fn topic_corpus(n_docs: usize) -> Vec<Document> {
    (0..n_docs)
        .map(|i| Document {
            id: format!("topic{i}"),
            title: format!("topic {i}"),
            text: format!(
                "subject overview poskey{i} basics. background subject overview for \
                 poskey{i} context and notes. posans{i}a posans{i}b details here."
            ),
            source: "synthetic".into(),
        })
        .collect()
}

/// Query/response pairs for the labeling fixture. The first
/// `n_positive` pairs ask about a topic document whose text contains
/// the response tokens (so retrieved docs raise the mock
/// log-likelihood); the rest use response tokens that occur nowhere in
/// the corpus, pinning `l1 == l0`.
pub fn label_pairs(n_total: usize, n_positive: usize, n_docs: usize) -> Vec<(String, String)> {
    assert!(n_positive <= n_total);
    (0..n_total)
        .map(|j| {
            if j < n_positive {
                let d = j % n_docs;
                (
                    format!("poskey{d} subject overview item {j}"),
                    format!("posans{d}a posans{d}b"),
                )
            } else {
                (
                    format!("negkey{j} subject overview item {j}"),
                    format!("negans{j}x negans{j}y"),
                )
            }
        })
        .collect()
}

pub struct EvalFixture {
    pub mcq: Vec<EvalSample>,
    pub ynm: Vec<EvalSample>,
    pub ner: Vec<EvalSample>,
    /// Prompt-fragment -> canned response entries for the mock backend.
    pub responses: BTreeMap<String, String>,
    /// Hand-computed expected per-task scores in percent.
    pub expected_mcq_acc: f64,
    pub expected_ynm_acc: f64,
}

/// Builds `per_task` samples for each task family with canned mock
/// answers keyed by a unique `qid` token in each question. MCQ answers
/// are wrong every 4th sample (75% accuracy), YNM every 4th (75%), and
/// NER predictions drop one gold entity on odd samples.
pub fn eval_fixture(per_task: usize) -> EvalFixture {
    let mut responses = BTreeMap::new();
    let letters = ['A', 'B', 'C', 'D'];

    let mcq: Vec<EvalSample> = (0..per_task)
        .map(|i| {
            let gold = letters[i % 4];
            let key = format!("qid mcq{i} ");
            let canned = if i % 4 == 3 {
                "I cannot settle on an option here".to_string()
            } else {
                format!("the answer is {gold}")
            };
            responses.insert(key, canned);
            EvalSample {
                id: format!("mcq{i}"),
                task: TaskKind::Mcq,
                query: format!("Which choice fits topic {i}? qid mcq{i} please"),
                options: letters
                    .iter()
                    .map(|&l| (l, format!("choice {l} for {i}")))
                    .collect(),
                gold: GoldAnswer::Letter(gold),
            }
        })
        .collect();

    let ynm_gold = [YnmLabel::Yes, YnmLabel::No, YnmLabel::Maybe];
    let ynm: Vec<EvalSample> = (0..per_task)
        .map(|i| {
            let gold = ynm_gold[i % 3];
            let gold_word = match gold {
                YnmLabel::Yes => "yes",
                YnmLabel::No => "no",
                YnmLabel::Maybe => "maybe",
            };
            let key = format!("qid ynm{i} ");
            let canned = if i % 4 == 2 {
                // always wrong: answer "yes" unless gold is yes
                let wrong = if gold == YnmLabel::Yes { "no" } else { "yes" };
                format!("Answer: {wrong}")
            } else {
                format!("Answer: {gold_word}")
            };
            responses.insert(key, canned);
            EvalSample {
                id: format!("ynm{i}"),
                task: TaskKind::YesNoMaybe,
                query: format!("Does statement {i} hold? qid ynm{i} overall"),
                options: vec![],
                gold: GoldAnswer::Ynm(gold),
            }
        })
        .collect();

    let ner: Vec<EvalSample> = (0..per_task)
        .map(|i| {
            let e1 = EntityInstance {
                mention: format!("drug{i}"),
                type_name: "CHEM".into(),
            };
            let e2 = EntityInstance {
                mention: format!("disease{i}"),
                type_name: "DISEASE".into(),
            };
            let key = format!("qid nerq{i} ");
            let canned = if i % 2 == 0 {
                format!(
                    r#"[{{"mention":"drug{i}","type":"CHEM"}},{{"mention":"disease{i}","type":"DISEASE"}}]"#
                )
            } else {
                format!(r#"[{{"mention":"drug{i}","type":"CHEM"}}]"#)
            };
            responses.insert(key, canned);
            EvalSample {
                id: format!("ner{i}"),
                task: TaskKind::Ner,
                query: format!("Patient took drug{i} for disease{i}. qid nerq{i} report"),
                options: vec![],
                gold: GoldAnswer::Entities([e1, e2].into_iter().collect()),
            }
        })
        .collect();

    let mcq_wrong = (0..per_task).filter(|i| i % 4 == 3).count();
    let ynm_wrong = (0..per_task).filter(|i| i % 4 == 2).count();
    EvalFixture {
        mcq,
        ynm,
        ner,
        responses,
        expected_mcq_acc: 100.0 * (per_task - mcq_wrong) as f64 / per_task as f64,
        expected_ynm_acc: 100.0 * (per_task - ynm_wrong) as f64 / per_task as f64,
    }
}

fn write_jsonl<I: IntoIterator<Item = String>>(path: &Path, lines: I) {
    let body: String = lines.into_iter().map(|l| l + "\n").collect();
    std::fs::write(path, body).unwrap();
}

pub fn write_corpus_jsonl(path: &Path, docs: &[Document]) {
    write_jsonl(path, docs.iter().map(|d| serde_json::to_string(d).unwrap()));
}

pub fn write_query_pairs_jsonl(path: &Path, pairs: &[(String, String)]) {
    write_jsonl(
        path,
        pairs.iter().map(|(q, r)| {
            serde_json::to_string(&serde_json::json!({"query": q, "response": r})).unwrap()
        }),
    );
}

pub fn write_eval_datasets(dir: &Path, fixture: &EvalFixture) {
    std::fs::create_dir_all(dir).unwrap();
    write_jsonl(
        &dir.join("mcq.jsonl"),
        fixture.mcq.iter().map(|s| {
            let options: Vec<_> = s
                .options
                .iter()
                .map(|(l, t)| serde_json::json!({"letter": l.to_string(), "text": t}))
                .collect();
            let GoldAnswer::Letter(answer) = &s.gold else {
                unreachable!()
            };
            serde_json::to_string(&serde_json::json!({
                "id": s.id, "question": s.query, "options": options,
                "answer": answer.to_string(),
            }))
            .unwrap()
        }),
    );
    write_jsonl(
        &dir.join("ynm.jsonl"),
        fixture.ynm.iter().map(|s| {
            let GoldAnswer::Ynm(answer) = &s.gold else {
                unreachable!()
            };
            let word = match answer {
                YnmLabel::Yes => "yes",
                YnmLabel::No => "no",
                YnmLabel::Maybe => "maybe",
            };
            serde_json::to_string(&serde_json::json!({
                "id": s.id, "question": s.query, "answer": word,
            }))
            .unwrap()
        }),
    );
    write_jsonl(
        &dir.join("ner.jsonl"),
        fixture.ner.iter().map(|s| {
            let GoldAnswer::Entities(entities) = &s.gold else {
                unreachable!()
            };
            let list: Vec<_> = entities
                .iter()
                .map(|e| serde_json::json!({"mention": e.mention, "type": e.type_name}))
                .collect();
            serde_json::to_string(&serde_json::json!({
                "id": s.id, "text": s.query, "entities": list,
            }))
            .unwrap()
        }),
    );
}

/// A fully provisioned CLI workspace in a temp directory.
pub struct CliWorkspace {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

impl CliWorkspace {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }
}

/// Writes corpus, labeling queries, eval datasets, mock response table,
/// and a config file wired to them.
pub fn setup_workspace(
    n_docs: usize,
    n_label_pairs: usize,
    n_label_positive: usize,
    samples_per_task: usize,
    mock_delay_s: f64,
) -> CliWorkspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let docs = topic_corpus(n_docs);
    write_corpus_jsonl(&root.join("corpus.jsonl"), &docs);

    let pairs = label_pairs(n_label_pairs, n_label_positive, n_docs);
    write_query_pairs_jsonl(&root.join("queries.jsonl"), &pairs);

    let fixture = eval_fixture(samples_per_task);
    write_eval_datasets(&root.join("datasets"), &fixture);
    std::fs::write(
        root.join("responses.json"),
        serde_json::to_string_pretty(&fixture.responses).unwrap(),
    )
    .unwrap();

    let config = root.join("ragbench.toml");
    std::fs::write(
        &config,
        format!(
            r#"seed = 42
parallelism = 2

[paths]
corpus = "corpus.jsonl"
index_dir = "index"
model_dir = "model"
report_dir = "report"
queries = "queries.jsonl"
labeled = "labeled.jsonl"

[paths.datasets]
mcq = "datasets/mcq.jsonl"
ynm = "datasets/ynm.jsonl"
ner = "datasets/ner.jsonl"

[backend.llm]
kind = "mock"
model_name = "mock-llm"
response_table_file = "responses.json"
mock_delay_s = {mock_delay_s}

[backend.embedder]
kind = "mock"
model_name = "bge-base"
"#
        ),
    )
    .unwrap();

    CliWorkspace { dir, config }
}
