//! Evaluation harness: dataset ingestion for the three task families,
//! answer parsing, and metrics (accuracy, instance-level strict
//! micro-F1, latency and report arithmetic).

mod grid;

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{RagError, Result};

pub use grid::{
    format_report_table, grid_run, preset_config, preset_setting, presentation_report, run_eval,
    write_report_json, EvalDatasets, GridComponents, GridRunner, PresetPlumbing,
    EVAL_PRESET_NAMES,
};

/// The three task families the harness evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Mcq,
    YesNoMaybe,
    Ner,
}

impl TaskKind {
    pub fn short_name(self) -> &'static str {
        match self {
            TaskKind::Mcq => "mcq",
            TaskKind::YesNoMaybe => "ynm",
            TaskKind::Ner => "ner",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YnmLabel {
    Yes,
    No,
    Maybe,
}

impl YnmLabel {
    pub fn parse(s: &str) -> Option<YnmLabel> {
        match s.to_ascii_lowercase().as_str() {
            "yes" => Some(YnmLabel::Yes),
            "no" => Some(YnmLabel::No),
            "maybe" => Some(YnmLabel::Maybe),
            _ => None,
        }
    }
}

/// One extracted entity; equality is exact string match on both fields.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityInstance {
    pub mention: String,
    #[serde(rename = "type")]
    pub type_name: String,
}

#[derive(Debug, Clone)]
pub enum GoldAnswer {
    Letter(char),
    Ynm(YnmLabel),
    Entities(BTreeSet<EntityInstance>),
}

#[derive(Debug, Clone)]
pub struct EvalSample {
    pub id: String,
    pub task: TaskKind,
    pub query: String,
    /// Present for MCQ samples: (letter, text) pairs.
    pub options: Vec<(char, String)>,
    pub gold: GoldAnswer,
}

#[derive(Deserialize)]
struct McqLine {
    id: String,
    question: String,
    options: Vec<McqOption>,
    answer: String,
}

#[derive(Deserialize)]
struct McqOption {
    letter: String,
    text: String,
}

#[derive(Deserialize)]
struct YnmLine {
    id: String,
    question: String,
    answer: String,
}

#[derive(Deserialize)]
struct NerLine {
    id: String,
    text: String,
    entities: Vec<EntityInstance>,
}

fn read_lines<T, F>(path: &Path, mut convert: F) -> Result<Vec<T>>
where
    F: FnMut(usize, &str) -> Result<T>,
{
    let file = File::open(path).map_err(|e| RagError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RagError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(convert(lineno + 1, &line)?);
    }
    Ok(out)
}

fn parse_err(line: usize, message: impl Into<String>) -> RagError {
    RagError::Parse {
        line,
        message: message.into(),
    }
}

/// Loads `{id, question, options: [{letter, text}], answer}` lines.
pub fn load_mcq_jsonl(path: &Path) -> Result<Vec<EvalSample>> {
    read_lines(path, |lineno, line| {
        let parsed: McqLine =
            serde_json::from_str(line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if parsed.options.len() < 2 {
            return Err(parse_err(lineno, "mcq sample needs at least 2 options"));
        }
        let mut options = Vec::new();
        for o in &parsed.options {
            let mut chars = o.letter.chars();
            let (Some(letter), None) = (chars.next(), chars.next()) else {
                return Err(parse_err(lineno, "option letter must be a single character"));
            };
            options.push((letter.to_ascii_uppercase(), o.text.clone()));
        }
        let letters: BTreeSet<char> = options.iter().map(|(l, _)| *l).collect();
        if letters.len() != options.len() {
            return Err(parse_err(lineno, "option letters must be distinct"));
        }
        let answer = parsed
            .answer
            .chars()
            .next()
            .map(|c| c.to_ascii_uppercase())
            .filter(|c| letters.contains(c))
            .ok_or_else(|| parse_err(lineno, "answer must be one of the option letters"))?;
        Ok(EvalSample {
            id: parsed.id,
            task: TaskKind::Mcq,
            query: parsed.question,
            options,
            gold: GoldAnswer::Letter(answer),
        })
    })
}

/// Loads `{id, question, answer}` lines with yes/no/maybe answers.
pub fn load_ynm_jsonl(path: &Path) -> Result<Vec<EvalSample>> {
    read_lines(path, |lineno, line| {
        let parsed: YnmLine =
            serde_json::from_str(line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let gold = YnmLabel::parse(&parsed.answer)
            .ok_or_else(|| parse_err(lineno, "answer must be yes, no, or maybe"))?;
        Ok(EvalSample {
            id: parsed.id,
            task: TaskKind::YesNoMaybe,
            query: parsed.question,
            options: Vec::new(),
            gold: GoldAnswer::Ynm(gold),
        })
    })
}

/// Loads `{id, text, entities: [{mention, type}]}` lines.
pub fn load_ner_jsonl(path: &Path) -> Result<Vec<EvalSample>> {
    read_lines(path, |lineno, line| {
        let parsed: NerLine =
            serde_json::from_str(line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if parsed
            .entities
            .iter()
            .any(|e| e.mention.is_empty() || e.type_name.is_empty())
        {
            return Err(parse_err(lineno, "entity mention and type must be non-empty"));
        }
        Ok(EvalSample {
            id: parsed.id,
            task: TaskKind::Ner,
            query: parsed.text,
            options: Vec::new(),
            gold: GoldAnswer::Entities(parsed.entities.into_iter().collect()),
        })
    })
}

/// Renders the pipeline query for a sample: MCQ options are listed after
/// the question, and NER samples state the required JSON output schema.
pub fn render_task_query(sample: &EvalSample) -> String {
    match sample.task {
        TaskKind::Mcq => {
            let options = sample
                .options
                .iter()
                .map(|(l, t)| format!("({l}) {t}"))
                .collect::<Vec<_>>()
                .join("\n");
            format!("{}\nOptions:\n{options}", sample.query)
        }
        TaskKind::YesNoMaybe => format!("{}\nAnswer yes, no, or maybe.", sample.query),
        TaskKind::Ner => format!(
            "{}\nList the named entities in the text above as a JSON array of objects, \
             each with fields \"mention\" and \"type\".",
            sample.query
        ),
    }
}

static MCQ_ANSWER_PATTERNS: LazyLock<[Regex; 2]> = LazyLock::new(|| {
    [
        Regex::new(r"(?i)\banswer\s+is\s*:?\s*\(?\s*([A-Za-z])\b").unwrap(),
        Regex::new(r"(?i)\banswer\s*:\s*\(?\s*([A-Za-z])\b").unwrap(),
    ]
});

static STANDALONE_LETTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b([A-Z])\b").unwrap());

/// Extracts an MCQ answer: the first "answer is X" / "Answer: X" match
/// with a valid option letter, else the last standalone valid option
/// letter, else none.
pub fn parse_mcq_answer(text: &str, options: &[(char, String)]) -> Option<char> {
    let letters: BTreeSet<char> = options.iter().map(|(l, _)| *l).collect();
    let mut pattern_hits: Vec<(usize, char)> = Vec::new();
    for pattern in MCQ_ANSWER_PATTERNS.iter() {
        for cap in pattern.captures_iter(text) {
            let m = cap.get(1).unwrap();
            let letter = m.as_str().chars().next().unwrap().to_ascii_uppercase();
            if letters.contains(&letter) {
                pattern_hits.push((m.start(), letter));
            }
        }
    }
    if let Some(&(_, letter)) = pattern_hits.iter().min_by_key(|(pos, _)| *pos) {
        return Some(letter);
    }
    STANDALONE_LETTER
        .captures_iter(text)
        .filter_map(|cap| {
            let letter = cap.get(1).unwrap().as_str().chars().next().unwrap();
            letters.contains(&letter).then_some(letter)
        })
        .last()
}

static YNM_WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(yes|no|maybe)\b").unwrap());

/// Extracts a yes/no/maybe verdict: the first label after the last
/// occurrence of "answer", else the last label anywhere, else none.
pub fn parse_ynm(text: &str) -> Option<YnmLabel> {
    let lower = text.to_lowercase();
    if let Some(pos) = lower.rfind("answer") {
        if let Some(m) = YNM_WORD.captures_iter(&text[pos..]).next() {
            return YnmLabel::parse(m.get(1).unwrap().as_str());
        }
    }
    YNM_WORD
        .captures_iter(text)
        .last()
        .and_then(|m| YnmLabel::parse(m.get(1).unwrap().as_str()))
}

/// Finds the first balanced JSON array in `text`, tracking strings and
/// escapes so brackets inside string literals don't count.
fn first_balanced_array(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut search_from = 0usize;
    while let Some(offset) = text[search_from..].find('[') {
        let start = search_from + offset;
        let mut depth = 0i32;
        let mut in_string = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'[' => depth += 1,
                b']' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[start..=i]);
                    }
                }
                _ => {}
            }
        }
        search_from = start + 1;
    }
    None
}

/// Parses model output into an entity set. Any structural failure —
/// no balanced array, invalid JSON, non-object elements, missing or
/// empty fields — yields the empty set (the null-list rule). Duplicates
/// collapse to one instance.
pub fn parse_ner_json(text: &str) -> BTreeSet<EntityInstance> {
    let Some(raw) = first_balanced_array(text) else {
        return BTreeSet::new();
    };
    let Ok(values) = serde_json::from_str::<Vec<serde_json::Value>>(raw) else {
        return BTreeSet::new();
    };
    let mut out = BTreeSet::new();
    for v in values {
        let (Some(mention), Some(type_name)) = (
            v.get("mention").and_then(|m| m.as_str()),
            v.get("type").and_then(|t| t.as_str()),
        ) else {
            return BTreeSet::new();
        };
        if mention.is_empty() || type_name.is_empty() {
            return BTreeSet::new();
        }
        out.insert(EntityInstance {
            mention: mention.to_string(),
            type_name: type_name.to_string(),
        });
    }
    out
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct F1Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Instance-level strict micro-F1: an entity counts only when mention
/// and type both match exactly; counts are pooled over all samples.
pub fn micro_f1(
    preds: &[(String, BTreeSet<EntityInstance>)],
    golds: &[(String, BTreeSet<EntityInstance>)],
) -> Result<F1Scores> {
    if preds.len() != golds.len() {
        return Err(RagError::InvalidInput(format!(
            "{} predictions for {} gold samples",
            preds.len(),
            golds.len()
        )));
    }
    let mut tp = 0usize;
    let mut n_pred = 0usize;
    let mut n_gold = 0usize;
    for ((pid, pred), (gid, gold)) in preds.iter().zip(golds) {
        if pid != gid {
            return Err(RagError::InvalidInput(format!(
                "misaligned sample ids: {pid:?} vs {gid:?}"
            )));
        }
        tp += pred.intersection(gold).count();
        n_pred += pred.len();
        n_gold += gold.len();
    }
    let precision = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
    let recall = if n_gold == 0 { 0.0 } else { tp as f64 / n_gold as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(F1Scores {
        precision,
        recall,
        f1,
    })
}

/// Fraction of samples whose parsed answer equals gold; unparsed
/// predictions count as incorrect.
pub fn accuracy<T: PartialEq>(preds: &[Option<T>], golds: &[T]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(RagError::InvalidInput(format!(
            "{} predictions for {} gold answers",
            preds.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Ok(0.0);
    }
    let correct = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.as_ref() == Some(g))
        .count();
    Ok(correct as f64 / golds.len() as f64)
}

/// One decimal, half away from zero. Applied only at presentation.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Percent change `100 * (new - old) / old`, rounded to one decimal.
pub fn relative_change(new: f64, old: f64) -> Result<f64> {
    if old == 0.0 {
        return Err(RagError::InvalidInput(
            "relative change is undefined for old = 0".into(),
        ));
    }
    Ok(round1(100.0 * (new - old) / old))
}

/// Scores for one configuration over the benchmark suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: String,
    /// Task short name -> score in percent (accuracy or micro-F1).
    pub per_task: BTreeMap<String, f64>,
    /// Arithmetic mean of the per-task scores.
    pub avg_score: f64,
    pub avg_latency_s: f64,
    pub n_samples: BTreeMap<String, usize>,
}
