//! Deterministic in-process backend.
//!
//! Every result is a pure function of (seed, model name, inputs), so
//! repeated calls are byte-identical and whole benchmark runs reproduce
//! exactly. The log-likelihood and embedding rules are simple enough to
//! hand-compute, which makes the labeling and retrieval paths testable
//! end to end without a real model.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use super::{fnv1a64, BackendConfig, EmbeddingVector, GenerationResult};
use crate::corpus::tokenize;
use crate::error::Result;

const ECHO_TOKENS: usize = 16;

#[derive(Debug)]
pub struct MockBackend {
    /// (key, response) pairs sorted longest-key-first.
    table: Vec<(String, String)>,
    hash_seed: u64,
    dim: usize,
    delay_s: f64,
    generate_calls: AtomicU64,
}

impl MockBackend {
    pub fn new(cfg: &BackendConfig) -> Self {
        let mut table: Vec<(String, String)> = cfg
            .response_table
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        table.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        MockBackend {
            table,
            hash_seed: fnv1a64(cfg.seed, cfg.model_name.as_bytes()),
            dim: cfg.embed_dim,
            delay_s: cfg.mock_delay_s,
            generate_calls: AtomicU64::new(0),
        }
    }

    fn sleep_delay(&self) {
        if self.delay_s > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(self.delay_s));
        }
    }

    pub fn generate(&self, prompt: &str) -> Result<GenerationResult> {
        self.generate_calls.fetch_add(1, Ordering::Relaxed);
        self.sleep_delay();
        let text = match self.table.iter().find(|(k, _)| prompt.contains(k)) {
            Some((_, response)) => response.clone(),
            None => {
                let tokens = tokenize(prompt);
                let tail = tokens[tokens.len().saturating_sub(ECHO_TOKENS)..].join(" ");
                let digest = fnv1a64(self.hash_seed, prompt.as_bytes());
                format!("{tail} [mock-{digest:016x}]")
            }
        };
        Ok(GenerationResult {
            text,
            latency_s: self.delay_s.max(0.0),
        })
    }

    /// Each continuation token scores -0.1 when it occurs in the context
    /// and -1.0 otherwise; the result is the sum. Matching is
    /// case-insensitive under the corpus tokenizer.
    pub fn log_likelihood(&self, continuation: &str, context: &str) -> f64 {
        let context_tokens: std::collections::HashSet<String> = tokenize(context)
            .into_iter()
            .map(|t| t.to_lowercase())
            .collect();
        tokenize(continuation)
            .into_iter()
            .map(|t| {
                if context_tokens.contains(&t.to_lowercase()) {
                    -0.1
                } else {
                    -1.0
                }
            })
            .sum()
    }

    /// Hashes each token into one of `dim` buckets, accumulates counts,
    /// and L2-normalizes, so token-overlapping texts land closer in
    /// cosine space.
    pub fn embed_batch(&self, texts: &[&str]) -> Vec<EmbeddingVector> {
        texts
            .iter()
            .map(|text| {
                let mut counts = vec![0f32; self.dim];
                let mut any = false;
                for token in tokenize(text) {
                    let bucket =
                        (fnv1a64(self.hash_seed, token.to_lowercase().as_bytes()) as usize)
                            % self.dim;
                    counts[bucket] += 1.0;
                    any = true;
                }
                if !any {
                    counts[0] = 1.0;
                }
                EmbeddingVector::unit(counts).expect("count vector is non-zero")
            })
            .collect()
    }

    pub fn generate_calls(&self) -> u64 {
        self.generate_calls.load(Ordering::Relaxed)
    }
}
