//! Pluggable model-inference layer: text generation, continuation
//! log-likelihood scoring, and text embedding.
//!
//! Two implementations sit behind one surface: an HTTP client for
//! OpenAI-compatible inference servers, and a fully deterministic mock
//! for tests and desk-scale benchmark runs. Backends are immutable after
//! construction and safe for concurrent calls.

mod http;
mod mock;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{RagError, Result};

pub use http::HttpBackend;
pub use mock::MockBackend;

/// Environment variable that overrides the configured HTTP endpoint.
pub const ENDPOINT_ENV_VAR: &str = "RAGBENCH_BACKEND_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
}

/// Settings for one inference backend.
///
/// The mock ignores `endpoint`; HTTP backends ignore the mock-only
/// fields (`seed`, `embed_dim`, `mock_delay_s`, `response_table`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    pub model_name: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub beam_width: u32,
    pub max_new_tokens: u32,
    pub seed: u64,
    pub embed_dim: usize,
    /// Synthetic per-call delay in seconds, for latency-path tests.
    pub mock_delay_s: f64,
    /// Maps a prompt fragment to a canned response. A prompt matches the
    /// entry whose key it contains; the longest key wins.
    pub response_table: BTreeMap<String, String>,
}

pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_BEAM_WIDTH: u32 = 3;

impl BackendConfig {
    /// A deterministic mock configuration with the given model tag.
    pub fn mock(model_name: &str, seed: u64) -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: String::new(),
            model_name: model_name.to_string(),
            timeout_ms: 30_000,
            max_retries: 0,
            beam_width: DEFAULT_BEAM_WIDTH,
            max_new_tokens: 256,
            seed,
            embed_dim: DEFAULT_EMBED_DIM,
            mock_delay_s: 0.0,
            response_table: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(RagError::InvalidInput("timeout_ms must be > 0".into()));
        }
        if self.beam_width == 0 {
            return Err(RagError::InvalidInput("beam_width must be >= 1".into()));
        }
        if self.kind == BackendKind::Http && resolved_endpoint(self).is_empty() {
            return Err(RagError::Config(
                "http backend requires `endpoint` (or RAGBENCH_BACKEND_ENDPOINT)".into(),
            ));
        }
        if self.kind == BackendKind::Mock && self.embed_dim == 0 {
            return Err(RagError::InvalidInput("embed_dim must be > 0".into()));
        }
        Ok(())
    }
}

/// The endpoint after applying the environment override.
pub fn resolved_endpoint(cfg: &BackendConfig) -> String {
    match std::env::var(ENDPOINT_ENV_VAR) {
        Ok(v) if !v.trim().is_empty() => v,
        _ => cfg.endpoint.clone(),
    }
}

/// One completed generation call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    /// Seconds the call took. HTTP backends measure wall clock; the mock
    /// reports its configured synthetic delay exactly.
    pub latency_s: f64,
}

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Normalizes `values` to unit Euclidean length.
    pub fn unit(values: Vec<f32>) -> Result<Self> {
        let norm = values.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(RagError::InvalidInput(
                "cannot normalize a zero or non-finite vector".into(),
            ));
        }
        let values = values.iter().map(|v| (*v as f64 / norm) as f32).collect();
        Ok(EmbeddingVector { values })
    }

    /// Wraps values that are already unit-norm (e.g. read back from a
    /// persisted index) without re-normalizing them.
    pub(crate) fn from_unit_values(values: Vec<f32>) -> Self {
        EmbeddingVector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| (*v as f64) * (*v as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Cosine similarity; equals the dot product for unit vectors.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum()
    }
}

/// A constructed inference backend.
#[derive(Debug)]
pub enum Backend {
    Mock(MockBackend),
    Http(HttpBackend),
}

impl Backend {
    pub fn new(cfg: &BackendConfig) -> Result<Backend> {
        cfg.validate()?;
        match cfg.kind {
            BackendKind::Mock => Ok(Backend::Mock(MockBackend::new(cfg))),
            BackendKind::Http => Ok(Backend::Http(HttpBackend::new(cfg)?)),
        }
    }

    /// Decodes a response for `prompt`.
    pub fn generate(&self, prompt: &str) -> Result<GenerationResult> {
        if prompt.is_empty() {
            return Err(RagError::InvalidInput("prompt must be non-empty".into()));
        }
        match self {
            Backend::Mock(b) => b.generate(prompt),
            Backend::Http(b) => b.generate(prompt),
        }
    }

    /// Sum of per-token log-probabilities of `continuation` given
    /// `context` (natural log, unnormalized).
    pub fn log_likelihood(&self, continuation: &str, context: &str) -> Result<f64> {
        if continuation.is_empty() {
            return Err(RagError::InvalidInput(
                "continuation must be non-empty".into(),
            ));
        }
        match self {
            Backend::Mock(b) => Ok(b.log_likelihood(continuation, context)),
            Backend::Http(b) => b.log_likelihood(continuation, context),
        }
    }

    /// One unit-norm vector per input text, in input order.
    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(RagError::InvalidInput("texts must be non-empty".into()));
        }
        if texts.iter().any(|t| t.is_empty()) {
            return Err(RagError::InvalidInput(
                "every text to embed must be non-empty".into(),
            ));
        }
        match self {
            Backend::Mock(b) => Ok(b.embed_batch(texts)),
            Backend::Http(b) => b.embed_batch(texts),
        }
    }

    /// Number of `generate` calls served so far.
    pub fn generate_calls(&self) -> u64 {
        match self {
            Backend::Mock(b) => b.generate_calls(),
            Backend::Http(b) => b.generate_calls(),
        }
    }
}

/// FNV-1a over a seed and a byte string; the deterministic hash behind
/// the mock's embeddings and digest echoes.
pub(crate) fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock_backend(seed: u64) -> Backend {
        Backend::new(&BackendConfig::mock("mock-llm", seed)).unwrap()
    }

    #[test]
    fn generate_uses_response_table() {
        let mut cfg = BackendConfig::mock("mock-llm", 1);
        cfg.response_table
            .insert("Q: 2+2?".to_string(), "4".to_string());
        let b = Backend::new(&cfg).unwrap();
        assert_eq!(b.generate("Q: 2+2?").unwrap().text, "4");
    }

    #[test]
    fn generate_rejects_empty_prompt() {
        let b = mock_backend(1);
        assert!(matches!(
            b.generate(""),
            Err(RagError::InvalidInput(_))
        ));
    }

    #[test]
    fn generate_is_deterministic() {
        let b = mock_backend(7);
        let a = b.generate("alpha beta").unwrap().text;
        let c = b.generate("alpha beta").unwrap().text;
        assert_eq!(a, c);
        let other_seed = mock_backend(8).generate("alpha beta").unwrap().text;
        assert_ne!(a, other_seed);
    }

    #[test]
    fn table_longest_key_wins() {
        let mut cfg = BackendConfig::mock("mock-llm", 1);
        cfg.response_table.insert("gout".into(), "short".into());
        cfg.response_table
            .insert("causes gout".into(), "long".into());
        let b = Backend::new(&cfg).unwrap();
        assert_eq!(b.generate("What causes gout?").unwrap().text, "long");
    }

    #[test]
    fn log_likelihood_mock_formula() {
        let b = mock_backend(1);
        // both tokens present: 2 * -0.1
        let l = b
            .log_likelihood("heart attack", "a heart attack is a cardiac event")
            .unwrap();
        assert!((l - (-0.2)).abs() < 1e-12);
        // neither present: 2 * -1.0
        let l = b.log_likelihood("heart attack", "completely unrelated").unwrap();
        assert!((l - (-2.0)).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_monotone_in_context_coverage() {
        let b = mock_backend(1);
        let covered = b.log_likelihood("uric acid", "uric acid builds up").unwrap();
        let uncovered = b.log_likelihood("uric acid", "nothing relevant here").unwrap();
        assert!(covered > uncovered);
    }

    #[test]
    fn log_likelihood_rejects_empty_continuation() {
        let b = mock_backend(1);
        assert!(matches!(
            b.log_likelihood("", "context"),
            Err(RagError::InvalidInput(_))
        ));
    }

    #[test]
    fn embed_identical_texts_identical_vectors() {
        let b = mock_backend(3);
        let vs = b.embed_batch(&["aspirin dose", "aspirin dose"]).unwrap();
        assert_eq!(vs[0], vs[1]);
        assert!((vs[0].cosine(&vs[1]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn embed_overlap_raises_cosine() {
        let b = mock_backend(3);
        let vs = b
            .embed_batch(&[
                "aspirin dose",
                "aspirin dose limit",
                "quantum chromodynamics",
            ])
            .unwrap();
        let near = vs[0].cosine(&vs[1]);
        let far = vs[0].cosine(&vs[2]);
        assert!(near > far, "expected {near} > {far}");
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let b = mock_backend(3);
        for v in b.embed_batch(&["one", "two words", "three word text"]).unwrap() {
            assert!((v.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn embed_batching_is_elementwise() {
        let b = mock_backend(5);
        let all = b.embed_batch(&["a b", "c d", "e f"]).unwrap();
        let first = b.embed_batch(&["a b"]).unwrap();
        let rest = b.embed_batch(&["c d", "e f"]).unwrap();
        assert_eq!(all[0], first[0]);
        assert_eq!(all[1], rest[0]);
        assert_eq!(all[2], rest[1]);
    }

    #[test]
    fn embed_rejects_empty_inputs() {
        let b = mock_backend(1);
        assert!(b.embed_batch(&[]).is_err());
        assert!(b.embed_batch(&["ok", ""]).is_err());
    }

    #[test]
    fn mock_latency_tracks_injected_delay() {
        let mut cfg = BackendConfig::mock("mock-llm", 1);
        cfg.mock_delay_s = 0.01;
        let slow = Backend::new(&cfg).unwrap();
        let fast = mock_backend(1);
        let slow_latency = slow.generate("hello world").unwrap().latency_s;
        let fast_latency = fast.generate("hello world").unwrap().latency_s;
        assert!(slow_latency >= 0.01);
        assert!(fast_latency >= 0.0);
        assert!(slow_latency > fast_latency);
    }

    #[test]
    fn endpoint_env_override() {
        let cfg = BackendConfig {
            kind: BackendKind::Http,
            endpoint: "http://configured:8000".into(),
            ..BackendConfig::mock("m", 0)
        };
        std::env::remove_var(ENDPOINT_ENV_VAR);
        assert_eq!(resolved_endpoint(&cfg), "http://configured:8000");
        std::env::set_var(ENDPOINT_ENV_VAR, "http://overridden:9000");
        assert_eq!(resolved_endpoint(&cfg), "http://overridden:9000");
        std::env::remove_var(ENDPOINT_ENV_VAR);
    }

    #[test]
    fn beam_width_and_timeout_validation() {
        let mut cfg = BackendConfig::mock("m", 0);
        cfg.beam_width = 0;
        assert!(Backend::new(&cfg).is_err());
        let mut cfg = BackendConfig::mock("m", 0);
        cfg.timeout_ms = 0;
        assert!(Backend::new(&cfg).is_err());
    }
}
