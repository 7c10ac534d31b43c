//! Document ingestion, sentence splitting, token counting, and the three
//! chunking strategies (vanilla, small2big, sliding-window).
//!
//! Chunking is sentence-level throughout: documents are split into
//! sentences and whole sentences are packed into chunks. A sentence longer
//! than the chunk size becomes its own oversized chunk rather than being
//! cut mid-sentence.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{RagError, Result};

/// A source document: one JSON Lines record of a corpus file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub source: String,
}

/// Which chunking strategy produced a chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum ChunkStrategy {
    Vanilla,
    Small2big,
    SlidingWindow,
}

impl ChunkStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            ChunkStrategy::Vanilla => "vanilla",
            ChunkStrategy::Small2big => "small2big",
            ChunkStrategy::SlidingWindow => "sliding_window",
        }
    }
}

/// Chunk-size settings. The small, large, and overlap sizes are fixed
/// ratios of the base chunk size: `L_c/2`, `L_c`, and `L_c/4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub strategy: ChunkStrategy,
    pub chunk_size: usize,
}

pub const DEFAULT_CHUNK_SIZE: usize = 256;

impl ChunkingConfig {
    pub fn new(strategy: ChunkStrategy, chunk_size: usize) -> Result<Self> {
        if chunk_size == 0 || !chunk_size.is_multiple_of(4) {
            return Err(RagError::InvalidInput(format!(
                "chunk_size must be a positive multiple of 4, got {chunk_size}"
            )));
        }
        Ok(ChunkingConfig {
            strategy,
            chunk_size,
        })
    }

    /// Retrieval-unit size for small2big chunking (`L_c/2`).
    pub fn small_size(&self) -> usize {
        self.chunk_size / 2
    }

    /// Context-unit size for small2big chunking (`L_c`).
    pub fn large_size(&self) -> usize {
        self.chunk_size
    }

    /// Sliding-window overlap in tokens (`L_c/4`).
    pub fn overlap(&self) -> usize {
        self.chunk_size / 4
    }
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        ChunkingConfig {
            strategy: ChunkStrategy::Small2big,
            chunk_size: DEFAULT_CHUNK_SIZE,
        }
    }
}

/// A retrievable text segment.
///
/// Ids are deterministic functions of `(doc_id, role, seq_no)`, so
/// re-chunking a corpus always yields identical ids. Small2big small
/// chunks carry the id of their enclosing large chunk in `parent_id`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub doc_id: String,
    pub seq_no: usize,
    pub text: String,
    pub token_count: usize,
    pub parent_id: Option<String>,
    pub strategy: ChunkStrategy,
}

fn chunk_id(doc_id: &str, role: &str, seq_no: usize) -> String {
    format!("{doc_id}::{role}::{seq_no}")
}

/// Tokenizes text into maximal alphanumeric runs plus single-character
/// punctuation tokens; whitespace is discarded.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if run_start.is_none() {
                run_start = Some(i);
            }
        } else {
            if let Some(s) = run_start.take() {
                tokens.push(&text[s..i]);
            }
            if !c.is_whitespace() {
                tokens.push(&text[i..i + c.len_utf8()]);
            }
        }
    }
    if let Some(s) = run_start {
        tokens.push(&text[s..]);
    }
    tokens
}

/// Number of tokens under the corpus tokenizer.
pub fn tokenize_count(text: &str) -> usize {
    tokenize(text).len()
}

const ABBREVIATIONS: &[&str] = &[
    "Dr.", "Mr.", "Mrs.", "Ms.", "Fig.", "e.g.", "i.e.", "et al.",
];

/// True when the '.' ending `text_up_to_dot` must not terminate a
/// sentence: a single-capital initial ("J.") or a known abbreviation.
fn guarded_period(text_up_to_dot: &str) -> bool {
    let before = &text_up_to_dot[..text_up_to_dot.len() - 1];
    let word: String = before
        .chars()
        .rev()
        .take_while(|c| c.is_alphanumeric())
        .collect();
    if word.chars().count() == 1 {
        let c = word.chars().next().unwrap();
        if c.is_uppercase() {
            return true;
        }
    }
    for abbr in ABBREVIATIONS {
        if let Some(head) = text_up_to_dot.strip_suffix(abbr) {
            // Reject matches glued to a longer word, e.g. "xDr.".
            let boundary = head
                .chars()
                .next_back()
                .is_none_or(|c| !c.is_alphanumeric());
            if boundary {
                return true;
            }
        }
    }
    false
}

/// Splits text into half-open byte spans, one per sentence, that cover
/// the input exactly (leading/trailing whitespace included). A split
/// happens after '.', '!', '?', or ';' followed by whitespace, except
/// where the abbreviation guard applies.
pub fn split_sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0usize;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let is_terminator = matches!(c, '.' | '!' | '?' | ';');
        if !is_terminator {
            continue;
        }
        let followed_by_ws = matches!(chars.peek(), Some((_, n)) if n.is_whitespace());
        if !followed_by_ws {
            continue;
        }
        let end = i + c.len_utf8();
        if c == '.' && guarded_period(&text[start..end]) {
            continue;
        }
        spans.push((start, end));
        start = end;
    }
    if start < text.len() {
        spans.push((start, text.len()));
    }
    spans
}

/// Splits text into trimmed sentences. Empty input yields an empty list.
pub fn split_sentences(text: &str) -> Vec<String> {
    split_sentence_spans(text)
        .into_iter()
        .filter_map(|(s, e)| {
            let t = text[s..e].trim();
            if t.is_empty() {
                None
            } else {
                Some(t.to_string())
            }
        })
        .collect()
}

/// Reads a JSON Lines corpus file: one `{id, title, text, source}` object
/// per line. Blank lines are skipped; malformed lines and duplicate ids
/// are rejected with the offending line number.
pub fn ingest(path: &Path) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| RagError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| RagError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| RagError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if doc.text.is_empty() {
            return Err(RagError::Parse {
                line: lineno,
                message: "field `text` must be non-empty".to_string(),
            });
        }
        if !seen.insert(doc.id.clone()) {
            return Err(RagError::Conflict(format!(
                "duplicate document id {:?} at line {lineno}",
                doc.id
            )));
        }
        docs.push(doc);
    }
    Ok(docs)
}

struct Sentence {
    text: String,
    tokens: usize,
}

fn sentences_of(doc: &Document) -> Vec<Sentence> {
    split_sentences(&doc.text)
        .into_iter()
        .map(|text| {
            let tokens = tokenize_count(&text);
            Sentence { text, tokens }
        })
        .collect()
}

/// Greedy sentence packing: consecutive ranges whose token totals stay
/// within `limit`; a single sentence over the limit gets its own range.
fn pack_greedy(sentences: &[Sentence], limit: usize) -> Vec<std::ops::Range<usize>> {
    let mut ranges = Vec::new();
    let mut i = 0;
    while i < sentences.len() {
        let mut j = i + 1;
        let mut total = sentences[i].tokens;
        while j < sentences.len() && total + sentences[j].tokens <= limit {
            total += sentences[j].tokens;
            j += 1;
        }
        ranges.push(i..j);
        i = j;
    }
    ranges
}

fn join_sentences(sentences: &[Sentence]) -> String {
    sentences
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

fn make_chunk(
    doc_id: &str,
    role: &str,
    seq_no: usize,
    sentences: &[Sentence],
    parent_id: Option<String>,
    strategy: ChunkStrategy,
) -> Chunk {
    let text = join_sentences(sentences);
    let token_count = tokenize_count(&text);
    Chunk {
        id: chunk_id(doc_id, role, seq_no),
        doc_id: doc_id.to_string(),
        seq_no,
        text,
        token_count,
        parent_id,
        strategy,
    }
}

/// Non-overlapping sentence-packed chunks of at most `chunk_size` tokens.
pub fn chunk_vanilla(doc: &Document, cfg: &ChunkingConfig) -> Vec<Chunk> {
    let sentences = sentences_of(doc);
    pack_greedy(&sentences, cfg.chunk_size)
        .into_iter()
        .enumerate()
        .map(|(seq, r)| {
            make_chunk(
                &doc.id,
                "vanilla",
                seq,
                &sentences[r],
                None,
                ChunkStrategy::Vanilla,
            )
        })
        .collect()
}

/// Overlapping sentence-packed chunks: each chunk after the first starts
/// with the smallest trailing sentence group of the previous chunk whose
/// token total reaches the overlap size `L_o` (shrunk from the front when
/// keeping it would push the next chunk past `chunk_size`).
pub fn chunk_sliding(doc: &Document, cfg: &ChunkingConfig) -> Vec<Chunk> {
    let sentences = sentences_of(doc);
    let n = sentences.len();
    let overlap = cfg.overlap();
    let mut chunks = Vec::new();
    let mut i = 0usize;
    let mut seq = 0usize;
    while i < n {
        let mut j = i + 1;
        let mut total = sentences[i].tokens;
        while j < n && total + sentences[j].tokens <= cfg.chunk_size {
            total += sentences[j].tokens;
            j += 1;
        }
        chunks.push(make_chunk(
            &doc.id,
            "sliding",
            seq,
            &sentences[i..j],
            None,
            ChunkStrategy::SlidingWindow,
        ));
        seq += 1;
        if j >= n {
            break;
        }
        // Smallest trailing suffix of [i..j) with >= L_o tokens.
        let mut k = j;
        let mut suffix = 0usize;
        while k > i && suffix < overlap {
            k -= 1;
            suffix += sentences[k].tokens;
        }
        // Shrink from the front until the next chunk can take sentence j.
        while k < j && suffix + sentences[j].tokens > cfg.chunk_size {
            suffix -= sentences[k].tokens;
            k += 1;
        }
        i = k;
    }
    chunks
}

/// Small2big chunking: large chunks are vanilla chunks at `L_c`; each
/// large chunk's sentences are re-packed at `L_c/2` into small chunks
/// that carry their parent's id. Retrieval indexes the small chunks;
/// generation receives the large ones.
pub fn chunk_small2big(doc: &Document, cfg: &ChunkingConfig) -> (Vec<Chunk>, Vec<Chunk>) {
    let sentences = sentences_of(doc);
    let large_ranges = pack_greedy(&sentences, cfg.large_size());
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut small_seq = 0usize;
    for (large_seq, lr) in large_ranges.into_iter().enumerate() {
        let parent = make_chunk(
            &doc.id,
            "large",
            large_seq,
            &sentences[lr.clone()],
            None,
            ChunkStrategy::Small2big,
        );
        let inner = &sentences[lr];
        for sr in pack_greedy(inner, cfg.small_size()) {
            small.push(make_chunk(
                &doc.id,
                "small",
                small_seq,
                &inner[sr],
                Some(parent.id.clone()),
                ChunkStrategy::Small2big,
            ));
            small_seq += 1;
        }
        large.push(parent);
    }
    (small, large)
}

/// Chunks produced for one document under a strategy: the retrieval
/// units plus, for small2big, the parent (large) chunks.
pub struct ChunkedDoc {
    pub retrieval_units: Vec<Chunk>,
    pub parents: Vec<Chunk>,
}

/// Applies the configured strategy to one document.
pub fn chunk_document(doc: &Document, cfg: &ChunkingConfig) -> ChunkedDoc {
    match cfg.strategy {
        ChunkStrategy::Vanilla => ChunkedDoc {
            retrieval_units: chunk_vanilla(doc, cfg),
            parents: Vec::new(),
        },
        ChunkStrategy::SlidingWindow => ChunkedDoc {
            retrieval_units: chunk_sliding(doc, cfg),
            parents: Vec::new(),
        },
        ChunkStrategy::Small2big => {
            let (small, large) = chunk_small2big(doc, cfg);
            ChunkedDoc {
                retrieval_units: small,
                parents: large,
            }
        }
    }
}

/// Writes chunks as JSON Lines `{id, doc_id, seq_no, text, token_count,
/// parent_id, strategy}`.
pub fn write_chunks_jsonl(path: &Path, chunks: &[Chunk]) -> Result<()> {
    let file = File::create(path).map_err(|e| RagError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for chunk in chunks {
        let line = serde_json::to_string(chunk)
            .map_err(|e| RagError::DataIntegrity(format!("chunk serialization failed: {e}")))?;
        writeln!(w, "{line}").map_err(|e| RagError::io(path.display().to_string(), e))?;
    }
    w.flush()
        .map_err(|e| RagError::io(path.display().to_string(), e))?;
    Ok(())
}

/// Reads a JSON Lines chunk store written by [`write_chunks_jsonl`].
pub fn read_chunks_jsonl(path: &Path) -> Result<Vec<Chunk>> {
    let file = File::open(path).map_err(|e| RagError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut chunks = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RagError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let chunk: Chunk = serde_json::from_str(&line).map_err(|e| RagError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        chunks.push(chunk);
    }
    Ok(chunks)
}
