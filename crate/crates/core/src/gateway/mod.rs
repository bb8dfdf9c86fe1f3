//! Uniform access to chat generation, teacher-forced scoring and embeddings.
//!
//! Every call goes through a [`Gateway`], which owns a content-addressed
//! [`Store`]. With a live [`Backend`] the store acts as a write-through cache;
//! without one it is a read-only replay store and any miss surfaces as
//! [`GatewayError::ReplayMiss`].
//!
//! Generation results are cached per sample index so that the `n` stochastic
//! samples of a request are individually addressable and replay byte-for-byte.

mod limit;
mod openai;
mod scripted;
mod simulated;
mod store;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use limit::{ConcurrencyLimiter, RateLimiter};
pub use openai::{OpenAiBackend, OpenAiConfig, ScoringMode};
pub use scripted::ScriptedBackend;
pub use simulated::SimulatedBackend;
pub use store::{CacheEntry, Store, StoreMode};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("network failure after {attempts} attempt(s): {message}")]
    NetworkFailure { attempts: u32, message: String },
    #[error("replay store has no {kind} entry for key {key}")]
    ReplayMiss { kind: String, key: String },
    #[error("backend `{backend}` cannot {capability}")]
    UnsupportedCapability { backend: String, capability: String },
    #[error("empty input text")]
    EmptyInput,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("store i/o failure: {0}")]
    Store(String),
}

impl GatewayError {
    /// True for errors caused by the backend or the replay store rather than
    /// by the caller's input.
    pub fn is_backend_failure(&self) -> bool {
        !matches!(self, GatewayError::EmptyInput | GatewayError::InvalidRequest(_))
    }
}

/// Error surfaced by a concrete backend before retry handling.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{message}")]
    Network { message: String, retryable: bool },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("{0}")]
    InvalidResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub n_samples: u32,
    pub max_tokens: u32,
    pub want_logprobs: bool,
}

impl GenerationRequest {
    pub fn new(messages: Vec<Message>) -> Self {
        Self { messages, temperature: 0.0, n_samples: 1, max_tokens: 512, want_logprobs: false }
    }

    pub fn temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn samples(mut self, n: u32) -> Self {
        self.n_samples = n;
        self
    }

    pub fn max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_logprobs(mut self) -> Self {
        self.want_logprobs = true;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("context_messages is empty".into()));
        }
        if self.n_samples == 0 {
            return Err(GatewayError::InvalidRequest("n_samples must be >= 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be a finite non-negative number, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// The part of the request that identifies one sample: everything except
    /// the sample count, which is addressed through the per-sample index.
    fn cache_identity(&self) -> serde_json::Value {
        serde_json::json!({
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "want_logprobs": self.want_logprobs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// One completion as produced by a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<TokenLogprob>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), logprobs: None, usage: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub text: String,
    pub logprobs: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub samples: Vec<Sample>,
    pub backend_id: String,
    pub cached: bool,
}

impl GenerationResult {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    /// Can return per-token logprobs of a supplied continuation.
    pub scoring: bool,
}

/// A concrete model provider.
///
/// Backends do not cache or retry; the [`Gateway`] does both.
pub trait Backend: Send + Sync {
    fn id(&self) -> String;

    fn capabilities(&self) -> Capabilities;

    /// Produce one completion for each entry of `sample_indices`.
    fn generate(
        &self,
        request: &GenerationRequest,
        sample_indices: &[u32],
    ) -> Result<Vec<Completion>, BackendError>;

    /// Teacher-forced logprobs of `target` as the assistant continuation of `context`.
    fn score(&self, context: &[Message], target: &str) -> Result<Vec<TokenLogprob>, BackendError>;

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, initial_backoff: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self { max_attempts, initial_backoff: Duration::ZERO }
    }
}

/// Number of calls issued against the gateway, by kind. Cache hits count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub generate: u64,
    pub score: u64,
    pub embed: u64,
    /// Calls that reached the backend (cache misses).
    pub backend: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Tokens estimated at four characters per token because the backend
    /// reported no usage (always the case for cached results).
    pub estimated_tokens: u64,
}

impl TokenCounts {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Default)]
struct Meters {
    generate: AtomicU64,
    score: AtomicU64,
    embed: AtomicU64,
    backend: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    estimated_tokens: AtomicU64,
}

pub(crate) fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

pub struct Gateway {
    backend_id: String,
    backend: Option<Arc<dyn Backend>>,
    store: Arc<Store>,
    retry: RetryPolicy,
    limiter: ConcurrencyLimiter,
    rate: Option<RateLimiter>,
    meters: Meters,
}

impl Gateway {
    /// A live gateway: misses go to `backend` and are written to `store`.
    pub fn new(backend: Arc<dyn Backend>, store: Arc<Store>) -> Self {
        Self {
            backend_id: backend.id(),
            backend: Some(backend),
            store,
            retry: RetryPolicy::default(),
            limiter: ConcurrencyLimiter::new(4),
            rate: None,
            meters: Meters::default(),
        }
    }

    /// A replay-only gateway answering exclusively from `store`.
    pub fn replay(backend_id: impl Into<String>, store: Arc<Store>) -> Self {
        Self {
            backend_id: backend_id.into(),
            backend: None,
            store,
            retry: RetryPolicy::default(),
            limiter: ConcurrencyLimiter::new(4),
            rate: None,
            meters: Meters::default(),
        }
    }

    /// Live backend with an in-memory cache. Mostly useful in tests.
    pub fn in_memory(backend: Arc<dyn Backend>) -> Self {
        Self::new(backend, Arc::new(Store::in_memory()))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.limiter = ConcurrencyLimiter::new(n);
        self
    }

    pub fn with_rate_limit(mut self, rate: RateLimiter) -> Self {
        self.rate = Some(rate);
        self
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn is_replay(&self) -> bool {
        self.backend.is_none()
    }

    pub fn supports_scoring(&self) -> bool {
        match &self.backend {
            Some(b) => b.capabilities().scoring,
            // A replay store can only answer what was recorded; let misses speak.
            None => true,
        }
    }

    pub fn call_counts(&self) -> CallCounts {
        CallCounts {
            generate: self.meters.generate.load(Ordering::Relaxed),
            score: self.meters.score.load(Ordering::Relaxed),
            embed: self.meters.embed.load(Ordering::Relaxed),
            backend: self.meters.backend.load(Ordering::Relaxed),
        }
    }

    pub fn token_counts(&self) -> TokenCounts {
        TokenCounts {
            prompt_tokens: self.meters.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.meters.completion_tokens.load(Ordering::Relaxed),
            estimated_tokens: self.meters.estimated_tokens.load(Ordering::Relaxed),
        }
    }

    fn key(&self, kind: &str, request: &serde_json::Value, sample_index: Option<u32>) -> String {
        store::content_key(&self.backend_id, kind, request, sample_index)
    }

    fn account(&self, prompt: &[Message], completion: &Completion) {
        match completion.usage {
            Some(u) => {
                self.meters.prompt_tokens.fetch_add(u.prompt_tokens, Ordering::Relaxed);
                self.meters.completion_tokens.fetch_add(u.completion_tokens, Ordering::Relaxed);
            }
            None => {
                let p: u64 = prompt.iter().map(|m| estimate_tokens(&m.content)).sum();
                let c = estimate_tokens(&completion.text);
                self.meters.prompt_tokens.fetch_add(p, Ordering::Relaxed);
                self.meters.completion_tokens.fetch_add(c, Ordering::Relaxed);
                self.meters.estimated_tokens.fetch_add(p + c, Ordering::Relaxed);
            }
        }
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut(&dyn Backend) -> Result<T, BackendError>,
        capability: &str,
    ) -> Result<T, GatewayError> {
        let backend = self.backend.as_deref().expect("live call on replay gateway");
        let mut backoff = self.retry.initial_backoff;
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if let Some(rate) = &self.rate {
                rate.acquire();
            }
            let outcome = {
                let _permit = self.limiter.acquire();
                self.meters.backend.fetch_add(1, Ordering::Relaxed);
                call(backend)
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(BackendError::Unsupported(_)) => {
                    return Err(GatewayError::UnsupportedCapability {
                        backend: self.backend_id.clone(),
                        capability: capability.to_string(),
                    })
                }
                Err(BackendError::InvalidResponse(m)) => return Err(GatewayError::InvalidResponse(m)),
                Err(BackendError::Network { message, retryable }) => {
                    last = message;
                    if !retryable {
                        return Err(GatewayError::NetworkFailure { attempts: attempt, message: last });
                    }
                    if attempt < attempts {
                        log::warn!("backend call failed (attempt {attempt}/{attempts}): {last}");
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(GatewayError::NetworkFailure { attempts, message: last })
    }

    fn miss(&self, kind: &str, key: &str) -> GatewayError {
        GatewayError::ReplayMiss { kind: kind.to_string(), key: key.to_string() }
    }

    /// Sample `n_samples` completions. Sample `i` is cached under its own key,
    /// so asking for more samples later reuses the earlier ones.
    pub fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        request.validate()?;
        self.meters.generate.fetch_add(1, Ordering::Relaxed);
        let identity = request.cache_identity();
        let n = request.n_samples;
        let keys: Vec<String> = (0..n).map(|i| self.key("generate", &identity, Some(i))).collect();

        let mut slots: Vec<Option<Completion>> = Vec::with_capacity(n as usize);
        for key in &keys {
            slots.push(self.store.get_as::<Completion>(key)?);
        }
        let missing: Vec<u32> = (0..n).filter(|&i| slots[i as usize].is_none()).collect();
        let cached = missing.is_empty();
        if !missing.is_empty() {
            if self.backend.is_none() {
                return Err(self.miss("generate", &keys[missing[0] as usize]));
            }
            let fresh = self.with_retries(|b| b.generate(request, &missing), "generate")?;
            if fresh.len() != missing.len() {
                return Err(GatewayError::InvalidResponse(format!(
                    "requested {} samples, backend returned {}",
                    missing.len(),
                    fresh.len()
                )));
            }
            for (i, mut completion) in missing.iter().zip(fresh) {
                if let Some(lps) = completion.logprobs.as_mut() {
                    sanitize_logprobs(lps)?;
                }
                self.store.put(&keys[*i as usize], "generate", &identity, &completion)?;
                slots[*i as usize] = Some(completion);
            }
        }

        let samples = slots
            .into_iter()
            .map(|c| {
                let c = c.expect("every slot filled");
                self.account(&request.messages, &c);
                Sample { text: c.text, logprobs: c.logprobs }
            })
            .collect();
        Ok(GenerationResult { samples, backend_id: self.backend_id.clone(), cached })
    }

    /// Convenience: a single sample at index 0, returned as text.
    pub fn complete(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        let mut req = request.clone();
        req.n_samples = 1;
        let mut result = self.generate(&req)?;
        Ok(result.samples.remove(0).text)
    }

    /// Per-token logprobs of `target` as the continuation of `context`.
    pub fn forced_logprobs(
        &self,
        context: &[Message],
        target: &str,
    ) -> Result<Vec<TokenLogprob>, GatewayError> {
        if context.is_empty() {
            return Err(GatewayError::InvalidRequest("context_messages is empty".into()));
        }
        if target.is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        self.meters.score.fetch_add(1, Ordering::Relaxed);
        let identity = serde_json::json!({ "context": context, "target": target });
        let key = self.key("score", &identity, None);
        if let Some(hit) = self.store.get_as::<Vec<TokenLogprob>>(&key)? {
            return Ok(hit);
        }
        let Some(backend) = &self.backend else {
            return Err(self.miss("score", &key));
        };
        if !backend.capabilities().scoring {
            return Err(GatewayError::UnsupportedCapability {
                backend: self.backend_id.clone(),
                capability: "score continuations".into(),
            });
        }
        let mut lps = self.with_retries(|b| b.score(context, target), "score continuations")?;
        sanitize_logprobs(&mut lps)?;
        let joined: String = lps.iter().map(|t| t.token.as_str()).collect();
        if joined != target {
            return Err(GatewayError::InvalidResponse(format!(
                "scored tokens reconstruct {joined:?}, expected {target:?}"
            )));
        }
        self.store.put(&key, "score", &identity, &lps)?;
        Ok(lps)
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        self.meters.embed.fetch_add(1, Ordering::Relaxed);
        let identity = serde_json::json!({ "text": text });
        let key = self.key("embed", &identity, None);
        let values = match self.store.get_as::<Vec<f64>>(&key)? {
            Some(v) => v,
            None => {
                if self.backend.is_none() {
                    return Err(self.miss("embed", &key));
                }
                let v = self.with_retries(|b| b.embed(text), "embed")?;
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return Err(GatewayError::InvalidResponse(
                        "embedding is empty or has non-finite entries".into(),
                    ));
                }
                self.store.put(&key, "embed", &identity, &v)?;
                v
            }
        };
        Ok(EmbeddingVector { values, model_id: self.backend_id.clone() })
    }

    /// Record a generation sample directly into the store (fixture priming).
    pub fn prime_generation(
        &self,
        request: &GenerationRequest,
        sample_index: u32,
        completion: &Completion,
    ) -> Result<(), GatewayError> {
        let identity = request.cache_identity();
        let key = self.key("generate", &identity, Some(sample_index));
        self.store.put(&key, "generate", &identity, completion)
    }

    pub fn prime_logprobs(
        &self,
        context: &[Message],
        target: &str,
        logprobs: &[TokenLogprob],
    ) -> Result<(), GatewayError> {
        let identity = serde_json::json!({ "context": context, "target": target });
        let key = self.key("score", &identity, None);
        self.store.put(&key, "score", &identity, &logprobs.to_vec())
    }

    pub fn prime_embedding(&self, text: &str, values: &[f64]) -> Result<(), GatewayError> {
        let identity = serde_json::json!({ "text": text });
        let key = self.key("embed", &identity, None);
        self.store.put(&key, "embed", &identity, &values.to_vec())
    }
}

fn sanitize_logprobs(lps: &mut [TokenLogprob]) -> Result<(), GatewayError> {
    for t in lps.iter_mut() {
        if !t.logprob.is_finite() && t.logprob != f64::NEG_INFINITY {
            return Err(GatewayError::InvalidResponse(format!("non-finite logprob for {:?}", t.token)));
        }
        if t.logprob > 1e-6 {
            return Err(GatewayError::InvalidResponse(format!(
                "positive logprob {} for {:?}",
                t.logprob, t.token
            )));
        }
        // providers occasionally report 1e-7 for certain tokens
        t.logprob = t.logprob.min(0.0);
    }
    Ok(())
}
