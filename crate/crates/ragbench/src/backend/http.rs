//! OpenAI-compatible HTTP backend.
//!
//! Generation and log-likelihood go through `/v1/completions`;
//! embeddings through `/v1/embeddings`. Log-likelihood relies on the
//! token-logprob echo feature (`echo=true, logprobs=0, max_tokens=0`);
//! servers without it are reported as unsupported. Failed requests are
//! retried with exponential backoff starting at 250 ms.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{resolved_endpoint, BackendConfig, EmbeddingVector, GenerationResult};
use crate::error::{RagError, Result};

const INITIAL_BACKOFF_MS: u64 = 250;

#[derive(Debug)]
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    max_retries: u32,
    beam_width: u32,
    max_new_tokens: u32,
    generate_calls: AtomicU64,
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self> {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build();
        let endpoint = resolved_endpoint(cfg)
            .trim_end_matches('/')
            .to_string();
        Ok(HttpBackend {
            agent: config.into(),
            endpoint,
            model: cfg.model_name.clone(),
            max_retries: cfg.max_retries,
            beam_width: cfg.beam_width,
            max_new_tokens: cfg.max_new_tokens,
            generate_calls: AtomicU64::new(0),
        })
    }

    fn post_json(&self, path: &str, body: &Value) -> Result<Value> {
        let url = format!("{}{}", self.endpoint, path);
        let mut last_err = String::new();
        let mut backoff = Duration::from_millis(INITIAL_BACKOFF_MS);
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            match self.agent.post(&url).send_json(body) {
                Ok(mut resp) => match resp.body_mut().read_json::<Value>() {
                    Ok(v) => return Ok(v),
                    Err(e) => last_err = format!("invalid JSON response: {e}"),
                },
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(RagError::BackendUnavailable(format!(
            "{url}: {last_err} (after {} attempt(s))",
            self.max_retries + 1
        )))
    }

    pub fn generate(&self, prompt: &str) -> Result<GenerationResult> {
        self.generate_calls.fetch_add(1, Ordering::Relaxed);
        let start = Instant::now();
        let mut body = json!({
            "model": self.model,
            "prompt": prompt,
            "max_tokens": self.max_new_tokens,
            "temperature": 0.0,
        });
        if self.beam_width > 1 {
            body["best_of"] = json!(self.beam_width);
        }
        let resp = self.post_json("/v1/completions", &body)?;
        let text = resp["choices"][0]["text"]
            .as_str()
            .ok_or_else(|| {
                RagError::BackendUnavailable("completion response has no choices[0].text".into())
            })?
            .to_string();
        Ok(GenerationResult {
            text,
            latency_s: start.elapsed().as_secs_f64(),
        })
    }

    pub fn log_likelihood(&self, continuation: &str, context: &str) -> Result<f64> {
        let prompt = format!("{context}{continuation}");
        let body = json!({
            "model": self.model,
            "prompt": prompt,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
        });
        let resp = self.post_json("/v1/completions", &body)?;
        let logprobs = &resp["choices"][0]["logprobs"];
        let token_logprobs = logprobs["token_logprobs"].as_array();
        let offsets = logprobs["text_offset"].as_array();
        let (token_logprobs, offsets) = match (token_logprobs, offsets) {
            (Some(t), Some(o)) if t.len() == o.len() => (t, o),
            _ => {
                return Err(RagError::BackendUnavailable(
                    "backend does not support log-likelihood scoring (no logprob echo)".into(),
                ))
            }
        };
        let boundary = context.len() as u64;
        let mut sum = 0.0;
        for (lp, off) in token_logprobs.iter().zip(offsets) {
            if off.as_u64().unwrap_or(0) >= boundary {
                sum += lp.as_f64().unwrap_or(0.0);
            }
        }
        Ok(sum)
    }

    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let body = json!({
            "model": self.model,
            "input": texts,
        });
        let resp = self.post_json("/v1/embeddings", &body)?;
        let data = resp["data"].as_array().ok_or_else(|| {
            RagError::BackendUnavailable("embedding response has no data array".into())
        })?;
        if data.len() != texts.len() {
            return Err(RagError::BackendUnavailable(format!(
                "embedding response has {} entries for {} inputs",
                data.len(),
                texts.len()
            )));
        }
        data.iter()
            .map(|entry| {
                let raw: Vec<f32> = entry["embedding"]
                    .as_array()
                    .ok_or_else(|| {
                        RagError::BackendUnavailable("embedding entry is not an array".into())
                    })?
                    .iter()
                    .map(|v| v.as_f64().unwrap_or(0.0) as f32)
                    .collect();
                EmbeddingVector::unit(raw)
            })
            .collect()
    }

    pub fn generate_calls(&self) -> u64 {
        self.generate_calls.load(Ordering::Relaxed)
    }
}
